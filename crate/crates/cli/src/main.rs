//! `prof-sim`: simulations and analyses of protected order flow in
//! proposer-builder block auctions.
//!
//! Subcommands: `simulate-amm`, `analyze-latency`, `simulate-protocol`,
//! `fetch-bids`. Exit codes: 0 success, 1 configuration error, 2 input
//! error, 3 runtime failure. Identical configuration and inputs produce
//! byte-identical output files.

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use prof_core::amm::{run_study, write_study_csv, AmmError};
use prof_core::ingest::{
    fetch_bid_traces, load_bid_traces, metadata_path, write_metadata, FetchConfig, FetchError,
    HttpSource, IngestError, TraceMetadata,
};
use prof_core::latency::{
    inclusion_surface, penalty_percentiles, write_penalty_csv, write_surface_csv, LatencyError,
    T0Strategy,
};
use prof_core::sim::{run_protocol, write_events_jsonl, write_slot_reports_csv};

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

fn amm_err(e: AmmError) -> CliError {
    match e {
        AmmError::BadConfig(_) => CliError::Config(e.to_string()),
        _ => CliError::Runtime(e.to_string()),
    }
}

fn latency_err(e: LatencyError) -> CliError {
    match e {
        LatencyError::NoSlots | LatencyError::EmptySlot { .. } => CliError::Input(e.to_string()),
        _ => CliError::Config(e.to_string()),
    }
}

fn input_err(e: IngestError) -> CliError {
    CliError::Input(e.to_string())
}

fn fetch_err(e: FetchError) -> CliError {
    match e {
        FetchError::Ingest(inner) => CliError::Input(inner.to_string()),
        FetchError::GaveUp { attempts, last } => {
            CliError::Runtime(format!("gave up after {attempts} attempts: {last}"))
        }
        other => CliError::Runtime(other.to_string()),
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "prof-sim",
    version,
    about = "Simulations and analyses of protected order flow in block auctions",
    after_help = "Relative data paths resolve against --data-dir, then \
                  $PROF_SIM_DATA_DIR, then the working directory.\n\
                  Exit codes: 0 success, 1 config error, 2 input error, 3 runtime failure."
)]
struct Cli {
    /// TOML run configuration; flags override file values
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Directory against which relative data paths resolve
    #[arg(long, global = true, value_name = "DIR")]
    data_dir: Option<PathBuf>,
    /// Override every random seed in the run
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare order-flow mechanisms by mean user utility on a synthetic
    /// constant-product market
    SimulateAmm(SimulateAmmArgs),
    /// Compute latency-penalty percentiles and the bundle-inclusion
    /// surface from relay bid traces
    AnalyzeLatency(AnalyzeLatencyArgs),
    /// Run the slot-by-slot header auction with the bundle merger and
    /// optional kickback auction attached
    SimulateProtocol(SimulateProtocolArgs),
    /// Download relay bid traces page by page with checkpointed resume
    FetchBids(FetchBidsArgs),
}

#[derive(Debug, Args)]
struct SimulateAmmArgs {
    /// Output CSV [default: amm_study.csv]
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Monte-Carlo iterations per grid cell [default: 200]
    #[arg(long)]
    iterations: Option<u32>,
    /// Demand-ratio caps, comma separated [default: 0.25,0.5,0.75,1,2,4,8]
    #[arg(long, value_delimiter = ',')]
    caps: Option<Vec<f64>>,
    /// Mean users per block, comma separated [default: 20,100]
    #[arg(long, value_delimiter = ',')]
    users: Option<Vec<u32>>,
    /// Fraction of arbitrage profit kicked back to users [default: 0.9]
    #[arg(long)]
    kickback: Option<f64>,
}

#[derive(Debug, Args)]
struct AnalyzeLatencyArgs {
    /// Bid-trace JSONL input; its .meta.json sidecar must sit next to it
    #[arg(long, value_name = "FILE")]
    bids: Option<PathBuf>,
    /// Penalty percentile CSV [default: latency_penalties.csv]
    #[arg(long, value_name = "FILE")]
    penalties_out: Option<PathBuf>,
    /// Inclusion surface CSV [default: inclusion_surface.csv]
    #[arg(long, value_name = "FILE")]
    surface_out: Option<PathBuf>,
    /// Merge-latency grid in ms, comma separated
    #[arg(long, value_delimiter = ',')]
    delta_grid_ms: Option<Vec<f64>>,
    /// Fee-overhead fractions, comma separated
    #[arg(long, value_delimiter = ',')]
    gamma_grid: Option<Vec<f64>>,
    /// Bundle sizes in gas, comma separated
    #[arg(long, value_delimiter = ',')]
    gas_grid: Option<Vec<u64>>,
    /// Fixed simulation overhead in ms [default: 6.25]
    #[arg(long)]
    delta0_ms: Option<f64>,
    /// Marginal simulation cost in ms per million gas [default: 5.26]
    #[arg(long)]
    beta_ms_per_mgas: Option<f64>,
}

#[derive(Debug, Args)]
struct SimulateProtocolArgs {
    /// Number of consecutive slots [default: 16]
    #[arg(long)]
    slots: Option<u64>,
    /// First slot number [default: 9000000]
    #[arg(long)]
    first_slot: Option<u64>,
    /// Protected transactions per slot [default: 5]
    #[arg(long)]
    users_per_slot: Option<u32>,
    /// Tip per gas of protected transactions, in wei [default: 2000000000]
    #[arg(long)]
    user_tip_per_gas: Option<u64>,
    /// Disable the sequencer + merger pipeline (plain header auction)
    #[arg(long)]
    no_prof: bool,
    /// Run the kickback auction on every committed enriched block
    #[arg(long)]
    prof_share: bool,
    /// Synthetic kickback submissions per auction [default: 0]
    #[arg(long)]
    share_arbs: Option<u32>,
    /// Per-slot report CSV [default: protocol_slots.csv]
    #[arg(long, value_name = "FILE")]
    reports_out: Option<PathBuf>,
    /// Event log JSONL [default: protocol_events.jsonl]
    #[arg(long, value_name = "FILE")]
    events_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FetchBidsArgs {
    /// Relay data API base URL (required here or in the config file)
    #[arg(long)]
    endpoint: Option<String>,
    /// First slot to fetch (inclusive)
    #[arg(long)]
    from_slot: Option<u64>,
    /// Last slot to fetch (inclusive)
    #[arg(long)]
    to_slot: Option<u64>,
    /// Output JSONL [default: bids.jsonl]
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Checkpoint path [default: <out stem>.checkpoint.json]
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Continue from an existing checkpoint instead of starting fresh
    #[arg(long)]
    resume: bool,
    /// Slots per request page [default: 8]
    #[arg(long)]
    page_slots: Option<u64>,
    /// Pause between pages in ms [default: 200]
    #[arg(long)]
    rate_limit_ms: Option<u64>,
    /// Attempts per page before giving up [default: 5]
    #[arg(long)]
    max_attempts: Option<u32>,
}

/// Resolved run environment: file config, data directory, seed override.
struct Context {
    config: RunConfig,
    data_dir: PathBuf,
    seed: Option<u64>,
}

impl Context {
    fn new(config: RunConfig, flag_data_dir: Option<PathBuf>, seed: Option<u64>) -> Self {
        let data_dir = flag_data_dir
            .or_else(|| config.data_dir.clone())
            .or_else(|| std::env::var_os("PROF_SIM_DATA_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        Self { config, data_dir, seed }
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.data_dir.join(path)
        }
    }

    fn create_output(&self, path: &Path) -> Result<(PathBuf, BufWriter<File>), CliError> {
        let full = self.resolve(path);
        if let Some(parent) = full.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| {
                    CliError::Runtime(format!("cannot create {}: {e}", parent.display()))
                })?;
            }
        }
        let file = File::create(&full)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", full.display())))?;
        Ok((full, BufWriter::new(file)))
    }
}

fn main() {
    // Die quietly on a closed pipe (`prof-sim … | head`) like other
    // line-oriented tools, instead of panicking mid-print.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run() -> Result<(), CliError> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return Ok(());
        }
        Err(e) => return Err(CliError::Config(e.to_string())),
    };
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let ctx = Context::new(config, cli.data_dir.clone(), cli.seed);
    match &cli.command {
        Command::SimulateAmm(args) => cmd_simulate_amm(&ctx, args),
        Command::AnalyzeLatency(args) => cmd_analyze_latency(&ctx, args),
        Command::SimulateProtocol(args) => cmd_simulate_protocol(&ctx, args),
        Command::FetchBids(args) => cmd_fetch_bids(&ctx, args),
    }
}

fn cmd_simulate_amm(ctx: &Context, args: &SimulateAmmArgs) -> Result<(), CliError> {
    let mut sim = ctx.config.amm.clone();
    if let Some(seed) = ctx.seed {
        sim.rng_seed = seed;
    }
    if let Some(iterations) = args.iterations {
        sim.iterations = iterations;
    }
    if let Some(kickback) = args.kickback {
        sim.kickback_fraction = kickback;
    }
    let caps = args.caps.clone().unwrap_or_else(|| ctx.config.amm_study.caps.clone());
    let users = args.users.clone().unwrap_or_else(|| ctx.config.amm_study.users.clone());
    let rows = run_study(&sim, &caps, &users).map_err(amm_err)?;

    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("amm_study.csv"));
    let (path, mut file) = ctx.create_output(&out)?;
    write_study_csv(&mut file, &rows).map_err(|e| CliError::Runtime(e.to_string()))?;
    file.flush().map_err(|e| CliError::Runtime(e.to_string()))?;

    println!(
        "utility study: {} caps x {} user means x {} iterations (seed {})",
        caps.len(),
        users.len(),
        sim.iterations,
        sim.rng_seed
    );
    for cell in rows.chunks_exact(3) {
        let means: Vec<String> = cell
            .iter()
            .map(|r| format!("{} {:+.6e}", r.mechanism.label(), r.mean_utility))
            .collect();
        println!(
            "  cap {:>5} users {:>4}:  {}",
            cell[0].demand_ratio_cap,
            cell[0].mean_users,
            means.join("  ")
        );
    }
    println!("wrote {} ({} rows)", path.display(), rows.len());
    Ok(())
}

fn cmd_analyze_latency(ctx: &Context, args: &AnalyzeLatencyArgs) -> Result<(), CliError> {
    let analysis = &ctx.config.latency_analysis;
    let bids = args.bids.clone().or_else(|| analysis.bids.clone()).ok_or_else(|| {
        CliError::Input("no bid-trace input: pass --bids or set latency_analysis.bids".to_string())
    })?;
    let bids_path = ctx.resolve(&bids);
    let slots = load_bid_traces(&bids_path).map_err(input_err)?;

    let mut model = ctx.config.latency;
    if let Some(delta0) = args.delta0_ms {
        model.delta0_ms = delta0;
    }
    if let Some(beta) = args.beta_ms_per_mgas {
        model.beta_ms_per_mgas = beta;
    }
    let delta_grid =
        args.delta_grid_ms.clone().unwrap_or_else(|| analysis.delta_grid_ms.clone());
    let gamma_grid = args.gamma_grid.clone().unwrap_or_else(|| analysis.gamma_grid.clone());
    let gas_grid = args.gas_grid.clone().unwrap_or_else(|| analysis.gas_grid.clone());

    let stats = penalty_percentiles(&slots, &delta_grid).map_err(latency_err)?;
    let surface = inclusion_surface(&slots, &gamma_grid, &gas_grid, &model).map_err(latency_err)?;

    let penalties_out =
        args.penalties_out.clone().unwrap_or_else(|| analysis.penalties_out.clone());
    let (penalties_path, mut penalties_file) = ctx.create_output(&penalties_out)?;
    write_penalty_csv(&mut penalties_file, &stats)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    penalties_file.flush().map_err(|e| CliError::Runtime(e.to_string()))?;

    let surface_out = args.surface_out.clone().unwrap_or_else(|| analysis.surface_out.clone());
    let (surface_path, mut surface_file) = ctx.create_output(&surface_out)?;
    write_surface_csv(&mut surface_file, &surface)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    surface_file.flush().map_err(|e| CliError::Runtime(e.to_string()))?;

    println!("analyzed {} slots from {}", slots.len(), bids_path.display());
    for s in &stats {
        println!(
            "  delta {:>8.2} ms: mean {:.3e} wei, p50 {:.3e}, p90 {:.3e}, p99 {:.3e}",
            s.delta_ms, s.mean, s.p50, s.p90, s.p99
        );
    }
    println!(
        "wrote {} ({} rows); wrote {} ({} rows)",
        penalties_path.display(),
        stats.len() * 5,
        surface_path.display(),
        surface.len()
    );
    Ok(())
}

fn cmd_simulate_protocol(ctx: &Context, args: &SimulateProtocolArgs) -> Result<(), CliError> {
    let mut protocol = ctx.config.protocol.clone();
    if let Some(seed) = ctx.seed {
        protocol.rng_seed = seed;
    }
    if let Some(slots) = args.slots {
        protocol.slots = slots;
    }
    if let Some(first_slot) = args.first_slot {
        protocol.first_slot = first_slot;
    }
    if let Some(users) = args.users_per_slot {
        protocol.users_per_slot = users;
    }
    if let Some(tip) = args.user_tip_per_gas {
        protocol.user_tip_per_gas = tip.into();
    }
    if args.no_prof {
        protocol.prof_enabled = false;
    }
    if args.prof_share {
        protocol.prof_share = true;
    }
    if let Some(arbs) = args.share_arbs {
        protocol.share_arbs = arbs;
    }

    let run = run_protocol(&protocol).map_err(|e| CliError::Config(e.to_string()))?;

    let reports_out =
        args.reports_out.clone().unwrap_or_else(|| PathBuf::from("protocol_slots.csv"));
    let (reports_path, mut reports_file) = ctx.create_output(&reports_out)?;
    write_slot_reports_csv(&mut reports_file, &run.reports)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    reports_file.flush().map_err(|e| CliError::Runtime(e.to_string()))?;

    let events_out =
        args.events_out.clone().unwrap_or_else(|| PathBuf::from("protocol_events.jsonl"));
    let (events_path, mut events_file) = ctx.create_output(&events_out)?;
    write_events_jsonl(&mut events_file, &run.events)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    events_file.flush().map_err(|e| CliError::Runtime(e.to_string()))?;

    let s = &run.summary;
    println!(
        "simulated {} slots from {} (seed {})",
        s.slots, protocol.first_slot, protocol.rng_seed
    );
    println!(
        "enriched {}/{} slots; merge refusals {}; equivocations {}",
        s.enriched_slots, s.slots, s.merge_refusals, s.equivocations
    );
    println!(
        "proposer revenue {} wei (merger-less baseline {} wei)",
        s.total_proposer_revenue_wei, s.total_baseline_revenue_wei
    );
    if protocol.prof_share {
        println!(
            "kickback auctions: {} original, {} extension",
            s.share_originals, s.share_extensions
        );
    }
    println!(
        "wrote {} ({} rows); wrote {} ({} events)",
        reports_path.display(),
        run.reports.len(),
        events_path.display(),
        run.events.len()
    );
    Ok(())
}

fn cmd_fetch_bids(ctx: &Context, args: &FetchBidsArgs) -> Result<(), CliError> {
    let settings = &ctx.config.fetch;
    let endpoint = args
        .endpoint
        .clone()
        .or_else(|| settings.endpoint.clone())
        .ok_or_else(|| {
            CliError::Config("no endpoint: pass --endpoint or set fetch.endpoint".to_string())
        })?;
    let from_slot = args.from_slot.or(settings.from_slot).ok_or_else(|| {
        CliError::Config("no from_slot: pass --from-slot or set fetch.from_slot".to_string())
    })?;
    let to_slot = args.to_slot.or(settings.to_slot).ok_or_else(|| {
        CliError::Config("no to_slot: pass --to-slot or set fetch.to_slot".to_string())
    })?;
    if to_slot < from_slot {
        return Err(CliError::Config(format!(
            "to_slot {to_slot} lies before from_slot {from_slot}"
        )));
    }

    let out = ctx.resolve(&args.out.clone().unwrap_or_else(|| settings.out.clone()));
    let checkpoint = match args.checkpoint.clone().or_else(|| settings.checkpoint.clone()) {
        Some(path) => ctx.resolve(&path),
        None => out.with_extension("checkpoint.json"),
    };
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| {
                CliError::Runtime(format!("cannot create {}: {e}", parent.display()))
            })?;
        }
    }
    if !args.resume {
        // A fresh run starts over; --resume keeps checkpoint and data.
        let _ = fs::remove_file(&checkpoint);
        let _ = fs::remove_file(&out);
    }

    let mut fetch_config = FetchConfig::new(from_slot, to_slot);
    fetch_config.page_slots = args.page_slots.unwrap_or(settings.page_slots);
    fetch_config.rate_limit_ms = args.rate_limit_ms.unwrap_or(settings.rate_limit_ms);
    fetch_config.max_attempts = args.max_attempts.unwrap_or(settings.max_attempts);
    fetch_config.backoff_base_ms = settings.backoff_base_ms;

    let mut source = HttpSource::new(endpoint.clone(), settings.fields.clone());
    let report =
        fetch_bid_traces(&mut source, &fetch_config, &out, &checkpoint, std::thread::sleep)
            .map_err(fetch_err)?;

    if !metadata_path(&out).exists() {
        let meta = TraceMetadata {
            genesis_ms: settings.genesis_ms,
            default_base_fee_wei: settings.base_fee_wei,
            base_fee_overrides: Default::default(),
            t0_strategy: T0Strategy::SlotDeadline,
            provenance: format!("fetched from {endpoint}, slots {from_slot}..={to_slot}"),
        };
        write_metadata(&out, &meta).map_err(|e| CliError::Runtime(e.to_string()))?;
    }

    println!(
        "fetched {} records in {} pages starting at slot {} ({})",
        report.records,
        report.pages,
        report.started_at,
        if report.resumed { "resumed" } else { "fresh" }
    );
    println!("wrote {}; checkpoint {}", out.display(), checkpoint.display());
    Ok(())
}
