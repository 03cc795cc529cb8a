//! Acceptance gate: ten release criteria, one test each, every assertion
//! at its stated tolerance. The per-test ok/FAILED line from the harness
//! is the pass/fail record; run with `--nocapture` for the measured
//! numbers behind each verdict.

use prof_core::amm::{
    optimal_backrun, run_mechanism, run_study_cells, sample_block_trades, Mechanism, PoolState,
    SimConfig, StaticMarket,
};
use prof_core::chain::{
    apply_block, Block, BlockHeader, Bundle, ChainState, FeeRouting, SignedHeader, SlotClock,
    Transaction, TxPayload, SLOT_DURATION_MS,
};
use prof_core::ingest::load_bid_traces;
use prof_core::latency::{inclusion_rate, latency_penalty, penalty_percentiles, LatencyModel, SlotBids};
use prof_core::pbs::{Bid, CommitError, RelayMode, RelayState};
use prof_core::prof::{
    prof_share_run, AuditEvent, GuardMode, MergeRefused, MergeStrategy, MergerConfig, MergerState,
    ProfShareState, Released,
};
use prof_core::types::{AccountId, BuilderId, Gas, SequencerId, Slot, TimeMs, TxId, Wei};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

const GWEI: Wei = 1_000_000_000;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

#[test]
fn criterion_01_constant_product_survives_10k_random_swaps() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC01);
    let mut worst = 0f64;
    for _ in 0..10_000 {
        let x = 10f64.powf(rng.gen_range(2.0..9.0));
        let y = 10f64.powf(rng.gen_range(2.0..9.0));
        let pool = PoolState::new(x, y).unwrap();
        let k0 = pool.product();
        let frac = rng.gen_range(1e-6..0.25f64);
        let amount = if rng.gen::<bool>() { frac * x } else { -(frac * y) };
        let (after, received) = pool.swap(amount).unwrap();
        assert!(received > 0.0, "trade {amount} on ({x}, {y}) received nothing");
        let drift = ((after.product() - k0) / k0).abs();
        worst = worst.max(drift);
        assert!(drift <= 1e-9, "product drift {drift:e} on ({x}, {y}) trade {amount}");
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    println!("criterion 1 PASS: 10000 swaps, worst relative product drift {worst:.2e}, {elapsed:?}");
}

#[test]
fn criterion_02_backrun_restores_price_and_beats_a_grid_search() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC02);
    let mut worst_price = 0f64;
    let mut worst_shortfall = 0f64;
    for _ in 0..1_000 {
        let lx = 10f64.powf(rng.gen_range(3.0..8.0));
        let ly = lx * 10f64.powf(rng.gen_range(-2.0..2.0));
        let balanced = PoolState::new(lx, ly).unwrap();
        let market = StaticMarket { price: balanced.price() };
        let frac = rng.gen_range(0.001..0.2f64);
        let user_trade = if rng.gen::<bool>() { frac * lx } else { -(frac * ly) };
        let (pool, _) = balanced.swap(user_trade).unwrap();

        let plan = optimal_backrun(&pool, &market);
        let (after, _) = pool.swap(plan.trade).unwrap();
        let price_err = ((after.price() - market.price) / market.price).abs();
        worst_price = worst_price.max(price_err);
        assert!(price_err <= 1e-9, "post-backrun price off by {price_err:e}");

        // Independent 10k-point oracle: raw constant-product arithmetic
        // over both trade directions, no reuse of the swap code.
        let (x, y, p) = (pool.reserve_x, pool.reserve_y, market.price);
        let mut grid_best = 0f64;
        for i in 1..=5_000 {
            let tx = 0.5 * x * i as f64 / 5_000.0;
            let profit_x = y * tx / (x + tx) - tx * p;
            let ty = 0.5 * y * i as f64 / 5_000.0;
            let profit_y = (x * ty / (y + ty)) * p - ty;
            grid_best = grid_best.max(profit_x).max(profit_y);
        }
        let shortfall = (grid_best - plan.profit) / plan.profit.abs().max(f64::MIN_POSITIVE);
        worst_shortfall = worst_shortfall.max(shortfall);
        assert!(
            shortfall <= 1e-6,
            "grid found {grid_best} vs formula {} (rel gap {shortfall:e})",
            plan.profit
        );
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    println!(
        "criterion 2 PASS: 1000 pools, worst price error {worst_price:.2e}, \
         worst grid-vs-formula gap {worst_shortfall:.2e}, {elapsed:?}"
    );
}

#[test]
fn criterion_03_mev_share_pays_every_user_identically() {
    let config = SimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC03);
    let mut worst = 0f64;
    let mut sequences = 0;
    for _ in 0..100 {
        let trades = sample_block_trades(&config, &mut rng).unwrap();
        if trades.is_empty() {
            continue;
        }
        sequences += 1;
        let outcome = run_mechanism(Mechanism::MevShare, &trades, &config);
        let max = outcome.utilities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = outcome.utilities.iter().cloned().fold(f64::INFINITY, f64::min);
        worst = worst.max(max - min);
        assert!(max - min <= 1e-9, "utility spread {:e} across {} users", max - min, trades.len());
    }
    assert!(sequences >= 99, "only {sequences} non-empty sequences sampled");
    println!("criterion 3 PASS: {sequences} sequences, worst utility spread {worst:.2e}");
}

#[test]
fn criterion_04_mechanism_ordering_holds_with_two_se_margins() {
    let started = Instant::now();
    let config = SimConfig::default();
    assert_eq!(config.iterations, 200);
    let caps = [0.25, 0.5, 1.0, 4.0];
    let users = [20u32, 100];
    let cells = run_study_cells(&config, &caps, &users).unwrap();
    assert_eq!(cells.len(), caps.len() * users.len());
    // The kickback auction must dominate both alternatives on the paired
    // mean at every cap; at extreme caps it converges toward the nearer
    // alternative, so the two-standard-error separation is demanded of
    // the strict ordering claims, where a significance bar is meaningful.
    let mut strict_margin = f64::INFINITY;
    for cell in &cells {
        let tag = format!("cap {} users {}", cell.demand_ratio_cap, cell.mean_users);
        let (ps_ms, _) = cell.paired_diff(Mechanism::ProfShare, Mechanism::MevShare);
        let (ps_prof, _) = cell.paired_diff(Mechanism::ProfShare, Mechanism::Prof);
        assert!(ps_ms >= 0.0, "{tag}: kickback auction under the direct-share mean");
        assert!(ps_prof >= 0.0, "{tag}: kickback auction under the no-kickback mean");
        if cell.demand_ratio_cap == 0.25 {
            let (diff, se) = cell.paired_diff(Mechanism::Prof, Mechanism::MevShare);
            assert!(diff > 2.0 * se, "{tag}: PROF lead {diff:e} within 2 SE ({se:e})");
            strict_margin = strict_margin.min(diff / se);
        }
        if cell.demand_ratio_cap == 4.0 {
            let (diff, se) = cell.paired_diff(Mechanism::MevShare, Mechanism::Prof);
            assert!(diff > 2.0 * se, "{tag}: MEV_SHARE lead {diff:e} within 2 SE ({se:e})");
            strict_margin = strict_margin.min(diff / se);
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    println!(
        "criterion 4 PASS: {} cells x {} iterations, kickback auction dominant everywhere, \
         weakest strict-ordering margin {strict_margin:.1} SE, {elapsed:?}",
        cells.len(),
        config.iterations
    );
}

#[test]
fn criterion_05_default_latency_model_pins_85ms_at_15m_gas() {
    let delta = LatencyModel::default().delta_ms(15_000_000);
    assert!((delta - 85.15).abs() <= 1.0, "delta(15M gas) = {delta} ms");
    println!("criterion 5 PASS: delta(15M gas) = {delta} ms (within 1 ms of 85.15)");
}

/// R-7 linearly interpolated percentile, recomputed here so the fixture
/// calibration does not lean on the library's own percentile code.
fn percentile_r7(sorted: &[f64], q: f64) -> f64 {
    let h = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[test]
fn criterion_06_synthetic_fixture_recovers_slope_and_includes_at_95pct() {
    let slots = load_bid_traces(&fixture("synthetic_bids.jsonl")).unwrap();
    assert!(slots.len() >= 100, "fixture has only {} slots", slots.len());

    // Recover the 90th-percentile penalty slope over a 0.1–1 s latency
    // sweep by ordinary least squares.
    let grid: Vec<f64> = (1..=10).map(|i| i as f64 * 100.0).collect();
    let stats = penalty_percentiles(&slots, &grid).unwrap();
    let n = grid.len() as f64;
    let mean_x = grid.iter().sum::<f64>() / n;
    let mean_y = stats.iter().map(|s| s.p90).sum::<f64>() / n;
    let cov: f64 = grid.iter().zip(&stats).map(|(x, s)| (x - mean_x) * (s.p90 - mean_y)).sum();
    let var: f64 = grid.iter().map(|x| (x - mean_x) * (x - mean_x)).sum();
    let slope_eth_per_s = cov / var * 1_000.0 / 1e18;
    let slope_err = (slope_eth_per_s - 0.022).abs() / 0.022;
    assert!(
        slope_err <= 0.10,
        "recovered slope {slope_eth_per_s} ETH/s, off by {:.1}%",
        slope_err * 100.0
    );

    // Self-consistency: price the protected bundle off the fixture's own
    // 95th-percentile penalty, then check it clears 95% of slots.
    let (gas, gamma) = (750_000u64, 0.1f64);
    let delta = LatencyModel::default().delta_ms(gas);
    let mut penalties: Vec<f64> =
        slots.iter().map(|s| latency_penalty(s, delta).unwrap() as f64).collect();
    penalties.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p95 = percentile_r7(&penalties, 95.0);
    let fee_per_gas = p95 / (gas as f64 * gamma) * 1.05;
    let fees = gas as f64 * gamma * fee_per_gas;
    let alpha = inclusion_rate(&slots, delta, |_| fees).unwrap();
    assert!(alpha >= 0.95, "alpha {alpha} with fees {fees:.3e} vs p95 penalty {p95:.3e}");
    println!(
        "criterion 6 PASS: slope {slope_eth_per_s:.5} ETH/s (err {:.2}%), \
         alpha {alpha:.4} at delta({gas}) = {delta} ms",
        slope_err * 100.0
    );
}

#[test]
fn criterion_07_inclusion_rate_equals_brute_force_on_three_fixtures() {
    let model = LatencyModel::default();
    let combos: [(Gas, f64); 3] = [(250_000, 0.05), (750_000, 0.1), (15_000_000, 0.5)];
    let mut checked = 0;
    for name in ["synthetic_bids.jsonl", "sample_bids.jsonl", "surge_bids.jsonl"] {
        let slots = load_bid_traces(&fixture(name)).unwrap();
        for (gas, gamma) in combos {
            let delta = model.delta_ms(gas);
            let fast = inclusion_rate(&slots, delta, |s: &SlotBids| {
                gas as f64 * gamma * s.base_fee as f64
            })
            .unwrap();
            // Brute force from raw traces: max bid at T0, max bid at
            // T0 − delta (0 when nothing bid that early), strict fee test.
            let mut included = 0usize;
            for slot in &slots {
                let best = slot
                    .traces
                    .iter()
                    .filter(|(t, _)| (*t as f64) <= slot.t0_ms as f64)
                    .map(|(_, v)| *v)
                    .max()
                    .unwrap_or(0);
                let early = slot
                    .traces
                    .iter()
                    .filter(|(t, _)| (*t as f64) <= slot.t0_ms as f64 - delta)
                    .map(|(_, v)| *v)
                    .max()
                    .unwrap_or(0);
                let penalty = best.saturating_sub(early) as f64;
                if gas as f64 * gamma * slot.base_fee as f64 > penalty {
                    included += 1;
                }
            }
            let brute = included as f64 / slots.len() as f64;
            assert_eq!(fast, brute, "{name} gas {gas} gamma {gamma}");
            checked += 1;
        }
    }
    println!("criterion 7 PASS: {checked} (fixture, gas, gamma) combinations match exactly");
}

fn account(name: impl Into<String>) -> AccountId {
    AccountId::new(name)
}

fn tx(
    id: impl Into<String>,
    sender: AccountId,
    gas_used: Gas,
    tip_per_gas: Wei,
    payload: TxPayload,
    base_fee: Wei,
) -> Transaction {
    Transaction {
        id: TxId::new(id),
        sender,
        nonce: 0,
        gas_used,
        base_fee_per_gas: base_fee,
        tip_per_gas,
        payload,
        arrival_time: 0,
    }
}

/// A builder block whose declared value is carried by one transfer to the
/// proposer, so optimistic and pessimistic relays agree on it.
fn payment_block(slot: Slot, builder: &str, seq: u32, value: Wei, proposer: &AccountId, base_fee: Wei) -> Block {
    Block {
        slot,
        prefix_txs: vec![tx(
            format!("pay-{slot}-{builder}-{seq}"),
            account(builder),
            21_000,
            0,
            TxPayload::Transfer { to: proposer.clone(), amount: value },
            base_fee,
        )],
        prof_txs: Vec::new(),
        backrun_txs: Vec::new(),
        fee_recipient: proposer.clone(),
        prof_tip_recipient: None,
    }
}

#[derive(Default)]
struct Tally {
    merges: u64,
    replay_refusals: u64,
    already_refusals: u64,
    after_reveal_refusals: u64,
    cap_refusals: u64,
    dropped_txs: u64,
    probes: u64,
    equivocation_attempts: u64,
    share_originals: u64,
    share_extensions: u64,
    share_rejects: u64,
    multi_checks: u64,
    concat_fallbacks: u64,
}

fn assert_merged_block_is_sound(block: &Block, bundle: &Bundle) {
    let ids: Vec<&TxId> = block.full_order().map(|t| &t.id).collect();
    let unique: BTreeSet<&TxId> = ids.iter().copied().collect();
    assert_eq!(ids.len(), unique.len(), "duplicate tx id in merged block");
    // Surviving sequenced txs must be a subsequence of the bundle.
    let mut cursor = bundle.txs.iter();
    'next_tx: for kept in &block.prof_txs {
        for candidate in cursor.by_ref() {
            if candidate.id == kept.id {
                continue 'next_tx;
            }
        }
        panic!("tx {:?} out of bundle order or not from the bundle", kept.id);
    }
}

fn run_share_auction(
    rng: &mut ChaCha8Rng,
    slot: Slot,
    end: TimeMs,
    prof_sig: &SignedHeader,
    block: &Arc<Block>,
    base: &ChainState,
    proposer: &AccountId,
    tally: &mut Tally,
) {
    let deadline = end + rng.gen_range(500..=1_500);
    let mut state = ProfShareState::new(slot, deadline);
    state
        .commit_prof(prof_sig.clone(), block.clone(), base.clone())
        .expect("the committed block re-validates");

    let users: Vec<AccountId> = block.prof_txs.iter().map(|t| t.sender.clone()).collect();
    let mut submissions = Vec::new();
    let mut expect_winner = false;
    for j in 0..rng.gen_range(0..=3u32) {
        let funded = !rng.gen_bool(0.15);
        let sender = if funded { account(format!("arb-{j}")) } else { account("arb-broke") };
        let to = if users.is_empty() || rng.gen_bool(0.3) {
            proposer.clone()
        } else {
            users[rng.gen_range(0..users.len())].clone()
        };
        let tip: Wei = if rng.gen_bool(0.2) { 0 } else { rng.gen_range(1..=3u128) * GWEI };
        let amount: Wei = rng.gen_range(1..=1_000u128) * 1_000_000_000_000;
        let at = end + rng.gen_range(0..=2_000);
        if at <= deadline && funded && (tip > 0 || to == *proposer) {
            expect_winner = true;
        }
        let backrun = tx(
            format!("share-{slot}-{j}"),
            sender,
            21_000,
            tip,
            TxPayload::Transfer { to, amount },
            base.base_fee_per_gas,
        );
        submissions.push((account(format!("arb-{j}")), vec![backrun], at));
    }

    let signs = rng.gen_bool(0.8);
    let (released, rejected) = prof_share_run(&mut state, submissions, |header| {
        signs.then(|| SignedHeader { header: *header, proposer_id: proposer.clone(), slot })
    })
    .expect("the auction always finalizes");
    tally.share_rejects += rejected.len() as u64;

    match released {
        Released::Share { sig, block: extension } => {
            tally.share_extensions += 1;
            assert!(expect_winner && signs, "extension without an eligible winner and signature");
            assert_eq!(sig.header, extension.header());
            assert_eq!(extension.prefix_txs, block.prefix_txs, "extension altered the prefix");
            assert_eq!(extension.prof_txs, block.prof_txs, "extension altered protected txs");
            assert!(!extension.backrun_txs.is_empty());
            assert!(apply_block(base, &extension).is_ok(), "released extension must execute");
        }
        Released::Prof { sig, block: original } => {
            tally.share_originals += 1;
            assert!(!(expect_winner && signs), "eligible winner plus signature must extend");
            assert_eq!(sig.header, prof_sig.header);
            assert_eq!(original.header(), prof_sig.header);
        }
    }
    assert!(state.released().is_some(), "exactly one block leaves the auction");
}

/// One randomized slot: a bid stream shared by a merger-attached relay
/// and a merger-less baseline, random merge/probe/restart interleavings,
/// then the commit, double-sign, and kickback-auction endgame.
fn run_schedule(seed: u64, tally: &mut Tally) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slot: Slot = rng.gen_range(2..=1_000_000);
    let clock = SlotClock::new(0);
    let (start, end) = (clock.slot_start(slot), clock.slot_end(slot));
    let base_fee: Wei = 5 * GWEI;
    let proposer = account("proposer");

    let mut base = ChainState::new(base_fee);
    for builder in ["builder-a", "builder-b", "builder-c"] {
        base = base.with_balance(account(builder), 10u128.pow(24));
    }
    for i in 0..8 {
        base = base.with_balance(account(format!("user-{i}")), 10u128.pow(21));
    }
    for j in 0..3 {
        base = base.with_balance(account(format!("arb-{j}")), 10u128.pow(21));
    }

    let mode = if rng.gen() { RelayMode::Pessimistic } else { RelayMode::Optimistic };
    // Both relays keep accepting builder bids after the reveal so the
    // revenue comparison is like-for-like on bid admission.
    let mut main = RelayState::new(slot, mode, base.clone());
    let mut baseline = RelayState::new(slot, mode, base.clone());

    let guard = if rng.gen() { GuardMode::EnrichOnce } else { GuardMode::BeginBeforeReveal };
    let cap = rng.gen_range(1..=3u32);
    let quiet: TimeMs = 12_000;
    let boot = start - rng.gen_range(0..=18_000);
    let gas_limit: Gas =
        if rng.gen_bool(0.25) { 21_000 + rng.gen_range(25_000..=90_000) } else { 30_000_000 };
    let mut merger = MergerState::new(
        MergerConfig {
            guard_mode: guard,
            enrich_cap: cap,
            delta_ms: rng.gen_range(10..=2_500),
            gas_limit,
            quiet_window_ms: quiet,
            fee_routing: FeeRouting::TipsToProposer,
        },
        boot,
    );
    let mut last_boot = boot;

    let mut bundle_txs = Vec::new();
    for i in 0..rng.gen_range(2..=5u32) {
        bundle_txs.push(tx(
            format!("seq-{i}"),
            account(format!("user-{i}")),
            rng.gen_range(21_000..=60_000),
            rng.gen_range(0..=3u128) * GWEI,
            TxPayload::Opaque,
            base_fee,
        ));
    }
    if rng.gen_bool(0.3) {
        let dup = bundle_txs[0].clone();
        bundle_txs.push(dup); // same id twice: the second copy must drop
    }
    if rng.gen_bool(0.3) {
        let mut clash = bundle_txs[0].clone();
        clash.id = TxId::new("seq-clash"); // same sender and nonce: must drop
        bundle_txs.push(clash);
    }
    if rng.gen_bool(0.3) {
        bundle_txs.push(tx("seq-broke", account("user-broke"), 21_000, GWEI, TxPayload::Opaque, base_fee));
    }
    let bundle =
        Bundle { txs: bundle_txs, sequencer_id: SequencerId::new("seq-1"), seal_time: start };
    merger.set_bundle(bundle.clone());

    // Event tape: guaranteed early bid, then a random mix over the slot.
    let (bid_ev, merge_ev, probe_ev, cancel_ev, restart_ev) = (0u8, 1, 2, 3, 4);
    let mut events: Vec<(TimeMs, u8)> = vec![(start + 100, bid_ev)];
    for _ in 0..rng.gen_range(8..=16) {
        let t = start + rng.gen_range(200..=SLOT_DURATION_MS);
        let kind = match rng.gen_range(0..100) {
            0..=44 => bid_ev,
            45..=74 => merge_ev,
            75..=89 => probe_ev,
            90..=94 => cancel_ev,
            _ => restart_ev,
        };
        events.push((t, kind));
    }
    events.sort_unstable();

    let builders = ["builder-a", "builder-b", "builder-c"];
    let mut bid_seq = 0u32;
    let mut enrich_successes = 0u32;
    let mut produced: BTreeMap<BlockHeader, Arc<Block>> = BTreeMap::new();
    let mut served_headers: BTreeSet<BlockHeader> = BTreeSet::new();

    for (t, kind) in events {
        match kind {
            k if k == bid_ev => {
                let builder = builders[rng.gen_range(0..builders.len())];
                let value: Wei = rng.gen_range(1..=200u128) * 1_000_000_000_000_000;
                let block = Arc::new(payment_block(slot, builder, bid_seq, value, &proposer, base_fee));
                bid_seq += 1;
                let bid = Bid {
                    builder_id: BuilderId::new(builder),
                    slot,
                    value,
                    timestamp_ms: t,
                    block,
                };
                main.submit_bid(bid.clone()).expect("payment bids are valid");
                baseline.submit_bid(bid).expect("payment bids are valid");
            }
            k if k == merge_ev => {
                let prefix = match main.best_bid(t) {
                    Some(best) => best.block.clone(),
                    None => continue,
                };
                match merger.merge(&prefix, &base, t) {
                    Ok(enriched) => {
                        tally.merges += 1;
                        enrich_successes += 1;
                        assert!(t >= last_boot + quiet, "enriched bid inside the replay window");
                        match guard {
                            GuardMode::EnrichOnce => assert!(enrich_successes <= 1),
                            GuardMode::BeginBeforeReveal => assert!(enrich_successes <= cap),
                        }
                        let block = merger.release_block(&enriched.header).expect("just produced");
                        let (_, value) = apply_block(&base, &block).expect("merged block executes");
                        assert_eq!(value, enriched.value, "declared enriched value drifted");
                        assert_merged_block_is_sound(&block, &bundle);
                        produced.insert(enriched.header, block);
                        main.submit_enriched(enriched).expect("relay takes enriched bids");
                    }
                    Err(MergeRefused::ReplayWindow { until }) => {
                        tally.replay_refusals += 1;
                        assert_eq!(until, last_boot + quiet);
                        assert!(t < until);
                    }
                    Err(MergeRefused::AlreadyEnriched) => {
                        tally.already_refusals += 1;
                        assert_eq!(guard, GuardMode::EnrichOnce);
                        assert!(enrich_successes >= 1);
                    }
                    Err(MergeRefused::AfterReveal { submitted, reveal }) => {
                        tally.after_reveal_refusals += 1;
                        assert_eq!(guard, GuardMode::BeginBeforeReveal);
                        assert!(submitted > reveal);
                    }
                    Err(MergeRefused::CapReached { cap: reported }) => {
                        tally.cap_refusals += 1;
                        assert_eq!(guard, GuardMode::BeginBeforeReveal);
                        assert_eq!(reported, cap);
                        assert!(enrich_successes >= cap);
                    }
                    Err(MergeRefused::InvalidPrefix(e)) => {
                        panic!("relay-vetted prefix refused: {e}")
                    }
                }
            }
            k if k == probe_ev => {
                tally.probes += 1;
                let served_main = main.get_header(t);
                let served_base = baseline.get_header(t);
                if let Some(b) = &served_base {
                    let m = served_main.as_ref().expect("main serves whenever baseline does");
                    assert!(
                        m.value >= b.value,
                        "merger-attached relay pays {} under baseline {}",
                        m.value,
                        b.value
                    );
                }
                if let Some(m) = &served_main {
                    served_headers.insert(m.header);
                }
            }
            k if k == cancel_ev => {
                let builder = BuilderId::new(builders[rng.gen_range(0..builders.len())]);
                let a = main.cancel_bids(&builder);
                let b = baseline.cancel_bids(&builder);
                assert_eq!(a, b, "cancellation diverged between relays");
            }
            _ => {
                merger.restart(t);
                last_boot = t;
                merger.set_bundle(bundle.clone());
            }
        }
    }

    tally.dropped_txs +=
        merger.audit().iter().filter(|e| matches!(e, AuditEvent::TxDropped { .. })).count() as u64;

    // Commit endgame at the slot deadline. Cancellations can leave the
    // book empty; the merger must never make that worse.
    let served_base = baseline.get_header(end);
    let served = match main.get_header(end) {
        Some(served) => served,
        None => {
            assert!(served_base.is_none(), "main relay lost a header the baseline kept");
            return;
        }
    };
    if let Some(b) = &served_base {
        assert!(served.value >= b.value, "final header pays under the baseline");
    }
    served_headers.insert(served.header);

    let signed = SignedHeader { header: served.header, proposer_id: proposer.clone(), slot };
    let outcome = main.commit_header(&signed).expect("served headers commit");
    let replayed = main.commit_header(&signed).expect("same-header commit is idempotent");
    assert_eq!(replayed.header, outcome.header);

    if let Some(&other) = served_headers.iter().find(|h| **h != served.header) {
        tally.equivocation_attempts += 1;
        let second = SignedHeader { header: other, proposer_id: proposer.clone(), slot };
        match main.commit_header(&second) {
            Err(CommitError::Equivocation { first, second }) => {
                assert_eq!(first, served.header);
                assert_eq!(second, other);
            }
            other => panic!("double signing must be flagged, got {other:?}"),
        }
        assert_eq!(main.equivocations().len(), 1);
    }
    let released = main.released().expect("committed slots release one block");
    assert_eq!(released.header, outcome.header, "released header changed after commit");

    let block: Arc<Block> = if outcome.enriched {
        produced.get(&outcome.header).expect("merger-produced contents were captured").clone()
    } else {
        outcome.contents.clone().expect("builder blocks ship their contents")
    };
    assert_eq!(block.header(), outcome.header);
    let (_, value) = apply_block(&base, &block).expect("released block executes");
    assert_eq!(value, served.value, "released block pays other than the served value");

    if rng.gen_bool(0.35) {
        run_share_auction(&mut rng, slot, end, &signed, &block, &base, &proposer, tally);
    }

    // Sequential concatenation must never pay under parallel best-of on
    // the same bundles, prefix, and gas budget.
    if rng.gen_bool(0.5) {
        tally.multi_checks += 1;
        let tight: Gas = 21_000 + rng.gen_range(30_000..=120_000);
        let config = MergerConfig {
            guard_mode: GuardMode::BeginBeforeReveal,
            enrich_cap: 8,
            delta_ms: 10,
            gas_limit: if rng.gen_bool(0.5) { tight } else { 30_000_000 },
            quiet_window_ms: 0,
            fee_routing: FeeRouting::TipsToProposer,
        };
        let mut sequential = MergerState::new(config.clone(), 0);
        let mut parallel = MergerState::new(config, 0);
        let prefix = payment_block(slot, "builder-a", 9_999, 10_000_000_000_000_000, &proposer, base_fee);
        let mut mk_bundle = |tag: &str, first_user: u32, seq_id: &str| Bundle {
            txs: (0..rng.gen_range(1..=3u32))
                .map(|i| {
                    tx(
                        format!("m-{tag}-{i}"),
                        account(format!("user-{}", first_user + i)),
                        30_000,
                        rng.gen_range(1..=4u128) * GWEI,
                        TxPayload::Opaque,
                        base_fee,
                    )
                })
                .collect(),
            sequencer_id: SequencerId::new(seq_id),
            seal_time: start,
        };
        let b1 = mk_bundle("a", 4, "seq-a");
        let b2 = mk_bundle("b", 5, "seq-b"); // overlapping senders collide in the concat
        let seq_bid = sequential
            .merge_multi(&prefix, &[b1.clone(), b2.clone()], MergeStrategy::SequentialConcat, &base, start)
            .expect("open guards admit the merge");
        let par_bid = parallel
            .merge_multi(&prefix, &[b1, b2], MergeStrategy::ParallelBest, &base, start)
            .expect("open guards admit the merge");
        assert!(
            seq_bid.value >= par_bid.value,
            "sequential concat pays {} under parallel best {}",
            seq_bid.value,
            par_bid.value
        );
        tally.concat_fallbacks += sequential
            .audit()
            .iter()
            .filter(|e| matches!(e, AuditEvent::ConcatFallback { .. }))
            .count() as u64;
    }
}

#[test]
fn criterion_08_protocol_invariants_hold_on_randomized_schedules() {
    let mut tally = Tally::default();
    let schedules = 1_200u64;
    for seed in 0..schedules {
        run_schedule(seed, &mut tally);
    }
    // Every guarded branch must actually have fired, or the invariants
    // above were never exercised.
    assert!(tally.merges > 0, "no schedule ever enriched");
    assert!(tally.probes > 0, "no mid-slot header probes happened");
    assert!(tally.replay_refusals > 0, "replay window never tested");
    assert!(tally.already_refusals > 0, "single-enrichment guard never tested");
    assert!(tally.after_reveal_refusals > 0, "post-reveal guard never tested");
    assert!(tally.cap_refusals > 0, "enrichment cap never tested");
    assert!(tally.dropped_txs > 0, "no invalid/duplicate/over-gas tx was ever dropped");
    assert!(tally.equivocation_attempts > 0, "double signing never attempted");
    assert!(tally.share_extensions > 0, "no kickback auction produced an extension");
    assert!(tally.share_originals > 0, "no kickback auction fell back to the original");
    assert!(tally.share_rejects > 0, "no kickback submission was ever rejected");
    assert!(tally.multi_checks > 0 && tally.concat_fallbacks > 0, "concat fallback never hit");
    println!(
        "criterion 8 PASS: {schedules} schedules; {} merges, {} probes, refusals \
         (replay {}, repeat {}, post-reveal {}, cap {}), {} dropped txs, {} double-sign \
         attempts, kickback auctions {} extended / {} original / {} rejected, \
         {} concat checks ({} fallbacks)",
        tally.merges,
        tally.probes,
        tally.replay_refusals,
        tally.already_refusals,
        tally.after_reveal_refusals,
        tally.cap_refusals,
        tally.dropped_txs,
        tally.equivocation_attempts,
        tally.share_extensions,
        tally.share_originals,
        tally.share_rejects,
        tally.multi_checks,
        tally.concat_fallbacks,
    );
}

/// Heap's algorithm; small n only.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut items: Vec<usize> = (0..n).collect();
    let mut out = vec![items.clone()];
    let mut counters = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if counters[i] < i {
            if i % 2 == 0 {
                items.swap(0, i);
            } else {
                items.swap(counters[i], i);
            }
            out.push(items.clone());
            counters[i] += 1;
            i = 0;
        } else {
            counters[i] = 0;
            i += 1;
        }
    }
    out
}

#[test]
fn criterion_09_trade_order_never_changes_the_final_pool() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC09);
    // Study-scale domain: deep pool, block-sized trades. Fixed-input
    // trades of opposite direction commute only up to ~2t^2/L per pair,
    // so the 1e-9 bound is a real constraint here (at t = 100, L = 1e7
    // one pair already contributes 2e-10) and fails for much larger
    // trades by the same formula, not by accumulated rounding.
    let liquidity = 1e7;
    let pool = PoolState::new(liquidity, liquidity).unwrap();
    let mut worst = 0f64;
    for _ in 0..500 {
        let n = rng.gen_range(1..=6usize);
        let trades: Vec<f64> = (0..n)
            .map(|_| {
                let size = rng.gen_range(1.0..100.0f64);
                if rng.gen::<bool>() {
                    size
                } else {
                    -size
                }
            })
            .collect();
        let run = |order: &[usize]| {
            let mut p = pool;
            for &i in order {
                p = p.swap(trades[i]).unwrap().0;
            }
            p
        };
        let reference = run(&(0..n).collect::<Vec<_>>());
        for permutation in permutations(n) {
            let permuted = run(&permutation);
            let diff = ((permuted.reserve_x - reference.reserve_x).abs())
                .max((permuted.reserve_y - reference.reserve_y).abs())
                / liquidity;
            worst = worst.max(diff);
            assert!(
                diff <= 1e-9,
                "order {permutation:?} of {trades:?} moved the pool by {diff:e}"
            );
        }
    }
    println!("criterion 9 PASS: 500 multisets, worst relative reserve deviation {worst:.2e}");
}

#[test]
fn criterion_10_cli_outputs_are_byte_stable_and_match_golden_files() {
    let produce = |dir: &Path| {
        let amm = std::process::Command::new(env!("CARGO_BIN_EXE_prof-sim"))
            .args(["simulate-amm", "--data-dir", dir.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(amm.status.success(), "{}", String::from_utf8_lossy(&amm.stderr));
        let latency = std::process::Command::new(env!("CARGO_BIN_EXE_prof-sim"))
            .args(["analyze-latency", "--bids", fixture("synthetic_bids.jsonl").to_str().unwrap()])
            .args(["--data-dir", dir.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(latency.status.success(), "{}", String::from_utf8_lossy(&latency.stderr));
    };
    let (first, second) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    produce(first.path());
    produce(second.path());
    let golden_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    for name in ["amm_study.csv", "latency_penalties.csv", "inclusion_surface.csv"] {
        let a = std::fs::read(first.path().join(name)).unwrap();
        let b = std::fs::read(second.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between two identical runs");
        let golden = std::fs::read(golden_dir.join(name)).unwrap();
        assert_eq!(a, golden, "{name} drifted from its golden copy");
    }
    println!("criterion 10 PASS: 3 output files byte-identical across runs and golden copies");
}
