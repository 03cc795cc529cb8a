//! Protected order flow: the sequencer that turns private transactions
//! into ordered bundles, and the merger that enriches builder blocks with
//! a bundle under grinding/replay guards, exposing only (header, value,
//! reveal time) until the proposer commits.

mod share;

pub use share::{prof_share_run, ProfShareError, ProfShareState, Released, ShareSubmission};

use crate::chain::{
    apply_block, apply_transaction, Block, BlockError, BlockHeader, Bundle, ChainState,
    FeeRouting, InvalidTx, Transaction, DEFAULT_GAS_LIMIT,
};
use crate::pbs::{EnrichedBid, RelayState, SubmitRejected};
use crate::types::{AccountId, Gas, SequencerId, TimeMs, TxId, Wei};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

/// Transaction-ordering policies available to a sequencer. Policies may
/// look only at arrival metadata and the gas price — never at payloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SequencerPolicy {
    /// First come, first served: order by arrival time.
    Fcfs,
    /// Highest tip per gas first.
    FeePriority,
}

/// Collects protected transactions and seals them into ordered bundles.
///
/// Incoming transactions are screened best-effort against the last
/// finalized state plus everything accepted so far, so a bundle is
/// internally consistent (sequential nonces from one sender all pass).
#[derive(Debug, Clone)]
pub struct Sequencer {
    pub id: SequencerId,
    pub policy: SequencerPolicy,
    screen_state: ChainState,
    pending: Vec<Transaction>,
}

impl Sequencer {
    pub fn new(id: SequencerId, policy: SequencerPolicy, finalized: ChainState) -> Self {
        Self { id, policy, screen_state: finalized, pending: Vec::new() }
    }

    /// Accept a transaction observed at `arrival` ms, or reject it if it
    /// cannot execute on top of what this sequencer already holds.
    pub fn ingest(&mut self, mut tx: Transaction, arrival: TimeMs) -> Result<(), InvalidTx> {
        tx.arrival_time = arrival;
        // Screening tips go nowhere relevant; burn them to the sequencer's
        // own sink so screening cannot affect real balances.
        let sink = AccountId::new(self.id.as_str());
        self.screen_state = apply_transaction(&self.screen_state, &tx, &sink)?;
        self.pending.push(tx);
        Ok(())
    }

    pub fn pending(&self) -> &[Transaction] {
        &self.pending
    }

    /// Snapshot the pending set into a bundle ordered by the policy.
    pub fn seal(&self, now: TimeMs) -> Bundle {
        let mut txs = self.pending.clone();
        match self.policy {
            SequencerPolicy::Fcfs => {
                txs.sort_by(|a, b| {
                    a.arrival_time.cmp(&b.arrival_time).then_with(|| a.id.cmp(&b.id))
                });
            }
            SequencerPolicy::FeePriority => {
                txs.sort_by(|a, b| {
                    b.tip_per_gas.cmp(&a.tip_per_gas).then_with(|| a.id.cmp(&b.id))
                });
            }
        }
        Bundle { txs, sequencer_id: self.id.clone(), seal_time: now }
    }
}

/// Which anti-grinding requirement the merger enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GuardMode {
    /// Enrich at most one prefix, ever.
    EnrichOnce,
    /// Accept prefixes only until the first enriched bid's reveal time,
    /// with a hard cap on total enrichments.
    BeginBeforeReveal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergerConfig {
    pub guard_mode: GuardMode,
    /// Maximum enrichments in [`GuardMode::BeginBeforeReveal`] mode.
    pub enrich_cap: u32,
    /// Modeled merge latency: reveal time = submit time + delta.
    pub delta_ms: TimeMs,
    pub gas_limit: Gas,
    /// After (re)boot the merger stays silent this long, so replaying old
    /// traffic at a restarted merger cannot mint a second enriched bid in
    /// the same slot.
    pub quiet_window_ms: TimeMs,
    pub fee_routing: FeeRouting,
}

impl Default for MergerConfig {
    fn default() -> Self {
        Self {
            guard_mode: GuardMode::EnrichOnce,
            enrich_cap: 3,
            delta_ms: 85,
            gas_limit: DEFAULT_GAS_LIMIT,
            quiet_window_ms: crate::chain::SLOT_DURATION_MS,
            fee_routing: FeeRouting::TipsToProposer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MergeRefused {
    #[error("merger is inside its post-boot quiet window until {until} ms")]
    ReplayWindow { until: TimeMs },
    #[error("merger already enriched a prefix")]
    AlreadyEnriched,
    #[error("prefix submitted at {submitted} ms, after the first reveal at {reveal} ms")]
    AfterReveal { submitted: TimeMs, reveal: TimeMs },
    #[error("enrichment cap of {cap} reached")]
    CapReached { cap: u32 },
    #[error("prefix block does not execute")]
    InvalidPrefix(#[source] BlockError),
}

/// How multiple sequencers' bundles are combined into one enriched block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MergeStrategy {
    /// Merge each bundle separately and keep the most valuable result.
    ParallelBest,
    /// Append all bundles in the given order into one block (falling back
    /// to the best single bundle if gas eviction ever makes that worth
    /// more, so the result never pays less than ParallelBest).
    SequentialConcat,
}

/// Merger observability record; serialized to JSON-lines by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEvent {
    BundleReplaced { sequencer_id: SequencerId, txs: usize },
    TxDropped { tx_id: TxId, reason: String },
    Enriched { header: BlockHeader, value: Wei, reveal_time_ms: TimeMs },
    ConcatFallback { concat_value: Wei, best_single_value: Wei },
    Restarted { at_ms: TimeMs },
}

/// The bundle merger. Holds the current bundle and the blocks it has
/// produced; everything observable before a commit is the
/// [`EnrichedBid`] — headers and values, never transactions.
#[derive(Debug, Clone)]
pub struct MergerState {
    config: MergerConfig,
    boot_time: TimeMs,
    bundle: Option<Bundle>,
    enrich_count: u32,
    first_reveal_time: Option<TimeMs>,
    produced: BTreeMap<BlockHeader, Arc<Block>>,
    audit: Vec<AuditEvent>,
}

impl MergerState {
    pub fn new(config: MergerConfig, boot_time: TimeMs) -> Self {
        Self {
            config,
            boot_time,
            bundle: None,
            enrich_count: 0,
            first_reveal_time: None,
            produced: BTreeMap::new(),
            audit: Vec::new(),
        }
    }

    pub fn config(&self) -> &MergerConfig {
        &self.config
    }

    pub fn boot_time(&self) -> TimeMs {
        self.boot_time
    }

    pub fn enrich_count(&self) -> u32 {
        self.enrich_count
    }

    pub fn first_reveal_time(&self) -> Option<TimeMs> {
        self.first_reveal_time
    }

    pub fn bundle(&self) -> Option<&Bundle> {
        self.bundle.as_ref()
    }

    pub fn audit(&self) -> &[AuditEvent] {
        &self.audit
    }

    /// Reboot: volatile state (bundle, counters, produced blocks) is gone
    /// and the quiet window starts over from `now`.
    pub fn restart(&mut self, now: TimeMs) {
        self.boot_time = now;
        self.bundle = None;
        self.enrich_count = 0;
        self.first_reveal_time = None;
        self.produced.clear();
        self.audit.push(AuditEvent::Restarted { at_ms: now });
    }

    /// Replace the current bundle with a newer one from its sequencer.
    pub fn set_bundle(&mut self, bundle: Bundle) {
        self.audit.push(AuditEvent::BundleReplaced {
            sequencer_id: bundle.sequencer_id.clone(),
            txs: bundle.txs.len(),
        });
        self.bundle = Some(bundle);
    }

    fn check_guards(&self, submit_time: TimeMs) -> Result<(), MergeRefused> {
        let until = self.boot_time + self.config.quiet_window_ms;
        if submit_time < until {
            return Err(MergeRefused::ReplayWindow { until });
        }
        match self.config.guard_mode {
            GuardMode::EnrichOnce => {
                if self.enrich_count >= 1 {
                    return Err(MergeRefused::AlreadyEnriched);
                }
            }
            GuardMode::BeginBeforeReveal => {
                if let Some(reveal) = self.first_reveal_time {
                    if submit_time > reveal {
                        return Err(MergeRefused::AfterReveal { submitted: submit_time, reveal });
                    }
                }
                if self.enrich_count >= self.config.enrich_cap {
                    return Err(MergeRefused::CapReached { cap: self.config.enrich_cap });
                }
            }
        }
        Ok(())
    }

    fn prof_tip_recipient(&self, prefix: &Block) -> AccountId {
        match &self.config.fee_routing {
            FeeRouting::TipsToProposer => prefix.fee_recipient.clone(),
            FeeRouting::TipsTo(account) => account.clone(),
        }
    }

    /// Simulate the bundle on top of the prefix, dropping anything that is
    /// a duplicate, invalid mid-simulation, or over the gas limit.
    fn build_enriched(
        &mut self,
        prefix: &Block,
        bundle_txs: &[Transaction],
        state: &ChainState,
    ) -> Result<(Block, Wei), MergeRefused> {
        let (after_prefix, _) = apply_block(state, prefix).map_err(MergeRefused::InvalidPrefix)?;
        let recipient = self.prof_tip_recipient(prefix);
        let mut gas = prefix.total_gas();
        let mut sim_state = after_prefix;
        let mut survivors = Vec::new();
        for tx in bundle_txs {
            if gas + tx.gas_used > self.config.gas_limit {
                self.audit.push(AuditEvent::TxDropped {
                    tx_id: tx.id.clone(),
                    reason: format!("gas limit: {} + {} > {}", gas, tx.gas_used, self.config.gas_limit),
                });
                continue;
            }
            match apply_transaction(&sim_state, tx, &recipient) {
                Ok(next) => {
                    sim_state = next;
                    gas += tx.gas_used;
                    survivors.push(tx.clone());
                }
                Err(reason) => {
                    self.audit.push(AuditEvent::TxDropped {
                        tx_id: tx.id.clone(),
                        reason: reason.to_string(),
                    });
                }
            }
        }
        let block = Block {
            slot: prefix.slot,
            prefix_txs: prefix.full_order().cloned().collect(),
            prof_txs: survivors,
            backrun_txs: Vec::new(),
            fee_recipient: prefix.fee_recipient.clone(),
            prof_tip_recipient: match &self.config.fee_routing {
                FeeRouting::TipsToProposer => None,
                FeeRouting::TipsTo(account) => Some(account.clone()),
            },
        };
        let (_, value) = apply_block(state, &block)
            .expect("merger simulation admitted only valid transactions");
        Ok((block, value))
    }

    fn commit_enriched(&mut self, block: Block, value: Wei, submit_time: TimeMs) -> EnrichedBid {
        let reveal_time_ms = submit_time + self.config.delta_ms;
        let header = block.header();
        let slot = block.slot;
        self.produced.insert(header, Arc::new(block));
        self.enrich_count += 1;
        if self.first_reveal_time.is_none() {
            self.first_reveal_time = Some(reveal_time_ms);
        }
        self.audit.push(AuditEvent::Enriched { header, value, reveal_time_ms });
        EnrichedBid { header, slot, value, reveal_time_ms, prefix_submit_time_ms: submit_time }
    }

    /// Enrich one prefix with the current bundle, if the guards allow it.
    /// The resulting bid can only ever pay more than the prefix alone.
    pub fn merge(
        &mut self,
        prefix: &Block,
        state: &ChainState,
        submit_time: TimeMs,
    ) -> Result<EnrichedBid, MergeRefused> {
        self.check_guards(submit_time)?;
        let bundle_txs = self.bundle.as_ref().map(|b| b.txs.clone()).unwrap_or_default();
        let (_, prefix_value) = apply_block(state, prefix).map_err(MergeRefused::InvalidPrefix)?;
        let (block, value) = self.build_enriched(prefix, &bundle_txs, state)?;
        debug_assert!(value >= prefix_value, "enrichment must not lose value");
        Ok(self.commit_enriched(block, value, submit_time))
    }

    /// Enrich one prefix with several sequencers' bundles. Counts as a
    /// single enrichment against the guards regardless of strategy.
    pub fn merge_multi(
        &mut self,
        prefix: &Block,
        bundles: &[Bundle],
        strategy: MergeStrategy,
        state: &ChainState,
        submit_time: TimeMs,
    ) -> Result<EnrichedBid, MergeRefused> {
        self.check_guards(submit_time)?;
        let mut best_single: Option<(Block, Wei)> = None;
        for bundle in bundles {
            let candidate = self.build_enriched(prefix, &bundle.txs, state)?;
            let better = match &best_single {
                None => true,
                Some((_, best)) => candidate.1 > *best,
            };
            if better {
                best_single = Some(candidate);
            }
        }
        let chosen = match strategy {
            MergeStrategy::ParallelBest => match best_single {
                Some(c) => c,
                None => self.build_enriched(prefix, &[], state)?,
            },
            MergeStrategy::SequentialConcat => {
                let concat: Vec<Transaction> =
                    bundles.iter().flat_map(|b| b.txs.iter().cloned()).collect();
                let concat_candidate = self.build_enriched(prefix, &concat, state)?;
                match best_single {
                    // Gas eviction can make the concatenation worth less
                    // than one bundle alone; fall back so the sequential
                    // strategy never pays less than the parallel one.
                    Some((block, value)) if value > concat_candidate.1 => {
                        self.audit.push(AuditEvent::ConcatFallback {
                            concat_value: concat_candidate.1,
                            best_single_value: value,
                        });
                        (block, value)
                    }
                    _ => concat_candidate,
                }
            }
        };
        Ok(self.commit_enriched(chosen.0, chosen.1, submit_time))
    }

    /// Hand out a produced block's contents. Only meaningful after the
    /// proposer committed to its header; the relay enforces that ordering.
    pub fn release_block(&self, header: &BlockHeader) -> Option<Arc<Block>> {
        self.produced.get(header).cloned()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HybridMergeError {
    #[error("merger refused the prefix")]
    Merge(#[source] MergeRefused),
    #[error("relay refused the enriched bid")]
    Relay(#[source] SubmitRejected),
}

/// Builder-hosted merger flow: merge a prefix locally, then place the
/// enriched bid at an optimistic relay. The relay cannot stop a builder
/// from enriching several of its own blocks; it can only refuse bids once
/// an enriched bid has been revealed.
pub fn hybrid_merge(
    merger: &mut MergerState,
    relay: &mut RelayState,
    prefix: &Block,
    state: &ChainState,
    submit_time: TimeMs,
) -> Result<EnrichedBid, HybridMergeError> {
    let bid = merger.merge(prefix, state, submit_time).map_err(HybridMergeError::Merge)?;
    relay.submit_enriched(bid.clone()).map_err(HybridMergeError::Relay)?;
    Ok(bid)
}
