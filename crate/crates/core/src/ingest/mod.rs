//! File formats and acquisition: relay bid-trace records (JSON lines
//! with a sidecar metadata file), AMM swap-event CSVs, resumable fetch
//! checkpoints, and the synthetic fixture generator.

mod fetch;

pub use fetch::{fetch_bid_traces, BidPageSource, FetchConfig, FetchError, FetchReport, FieldMap, HttpSource};

use crate::amm::{BlockTrades, PoolBlockTrades};
use crate::chain::SLOT_DURATION_MS;
use crate::latency::{estimate_t0, SlotBids, T0Strategy};
use crate::types::{PoolId, Slot, Wei};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

/// One relay bid observation as it appears on the wire. `value_wei`
/// travels as a decimal string: JSON numbers cannot be trusted with
/// 256-bit-era wei amounts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidTraceRecord {
    pub slot: Slot,
    pub timestamp_ms: u64,
    #[serde(with = "wei_string")]
    pub value_wei: Wei,
    pub builder_id: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub cancelled: bool,
}

mod wei_string {
    use serde::{de, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&value.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        struct Visitor;
        impl de::Visitor<'_> for Visitor {
            type Value = u128;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a decimal string or non-negative integer")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<u128, E> {
                v.parse().map_err(|_| E::custom(format!("bad wei amount: {v:?}")))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<u128, E> {
                Ok(v as u128)
            }

            fn visit_u128<E: de::Error>(self, v: u128) -> Result<u128, E> {
                Ok(v)
            }
        }
        d.deserialize_any(Visitor)
    }
}

/// Sidecar metadata shipped next to a bid-trace file (`x.jsonl` →
/// `x.meta.json`): absolute slot timing, base fees, and how the commit
/// time T0 should be estimated for these slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    /// Epoch ms of slot 0's start; in-slot times are relative to
    /// `genesis_ms + slot · 12000`.
    pub genesis_ms: u64,
    pub default_base_fee_wei: Wei,
    #[serde(default)]
    pub base_fee_overrides: BTreeMap<Slot, Wei>,
    #[serde(default = "TraceMetadata::default_strategy")]
    pub t0_strategy: T0Strategy,
    #[serde(default)]
    pub provenance: String,
}

impl TraceMetadata {
    fn default_strategy() -> T0Strategy {
        T0Strategy::SlotDeadline
    }

    pub fn base_fee_for(&self, slot: Slot) -> Wei {
        self.base_fee_overrides.get(&slot).copied().unwrap_or(self.default_base_fee_wei)
    }

    pub fn slot_start_ms(&self, slot: Slot) -> u64 {
        self.genesis_ms + slot * SLOT_DURATION_MS
    }
}

/// Where a trace file's sidecar lives: `bids.jsonl` → `bids.meta.json`.
pub fn metadata_path(traces: &Path) -> PathBuf {
    traces.with_extension("meta.json")
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    BidLine { path: PathBuf, line: usize, message: String },
    #[error("missing metadata sidecar {path}")]
    MissingMetadata { path: PathBuf },
    #[error("bad metadata {path}: {message}")]
    Metadata { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    SwapRow { path: PathBuf, line: u64, message: String },
    #[error("bad checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io { path: path.to_path_buf(), source }
}

pub fn load_metadata(traces_path: &Path) -> Result<TraceMetadata, IngestError> {
    let path = metadata_path(traces_path);
    if !path.exists() {
        return Err(IngestError::MissingMetadata { path });
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text)
        .map_err(|e| IngestError::Metadata { path, message: e.to_string() })
}

/// Parse a JSON-lines bid-trace file into per-slot bid streams.
///
/// Cancellations are resolved here (a cancelled bid never reaches the
/// analytics), timestamps become in-slot offsets, traces are sorted by
/// time, and each slot gets its base fee and T0 estimate from the
/// sidecar metadata. Slots whose bids were all cancelled are dropped.
pub fn load_bid_traces(path: &Path) -> Result<Vec<SlotBids>, IngestError> {
    let meta = load_metadata(path)?;
    let records = read_bid_records(path)?;
    let mut by_slot: BTreeMap<Slot, Vec<(i64, Wei)>> = BTreeMap::new();
    for record in &records {
        if record.cancelled {
            continue;
        }
        let in_slot = record.timestamp_ms as i64 - meta.slot_start_ms(record.slot) as i64;
        by_slot.entry(record.slot).or_default().push((in_slot, record.value_wei));
    }
    let mut slots = Vec::with_capacity(by_slot.len());
    for (slot, mut traces) in by_slot {
        traces.sort();
        let t0_ms = estimate_t0(&traces, meta.t0_strategy)
            .expect("slots with no surviving bids are never inserted");
        slots.push(SlotBids { slot, traces, t0_ms, base_fee: meta.base_fee_for(slot) });
    }
    Ok(slots)
}

/// Raw record pass with line-numbered errors; no grouping or filtering.
pub fn read_bid_records(path: &Path) -> Result<Vec<BidTraceRecord>, IngestError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: BidTraceRecord = serde_json::from_str(&line).map_err(|e| {
            IngestError::BidLine { path: path.to_path_buf(), line: idx + 1, message: e.to_string() }
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_bid_records(
    path: &Path,
    records: &[BidTraceRecord],
    meta: &TraceMetadata,
) -> Result<(), IngestError> {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("record serialization is infallible"));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))?;
    write_metadata(path, meta)
}

/// Write just the metadata sidecar for an existing trace file.
pub fn write_metadata(traces_path: &Path, meta: &TraceMetadata) -> Result<(), IngestError> {
    let meta_path = metadata_path(traces_path);
    let meta_json =
        serde_json::to_string_pretty(meta).expect("metadata serialization is infallible");
    fs::write(&meta_path, meta_json).map_err(io_err(&meta_path))?;
    Ok(())
}

/// AMM swap-event CSV rows: `pool_id,block_number,amount_x,amount_y`,
/// with exactly one side negative (the token the trader received).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapEventRecord {
    pub pool_id: String,
    pub block_number: u64,
    pub amount_x: f64,
    pub amount_y: f64,
}

/// Group swap events into per-pool, per-block signed X-amount lists
/// (positive: pool received X; negative: pool paid X out).
pub fn load_swap_events(path: &Path) -> Result<PoolBlockTrades, IngestError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::Reader::from_reader(file);
    let row_err = |line: u64, message: String| IngestError::SwapRow {
        path: path.to_path_buf(),
        line,
        message,
    };
    let headers = reader.headers().map_err(|e| row_err(1, e.to_string()))?.clone();
    let mut grouped: BTreeMap<PoolId, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    let mut raw = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut raw) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(row_err(reader.position().line(), e.to_string())),
        }
        let line = raw.position().map(|p| p.line()).unwrap_or(0);
        let row: SwapEventRecord =
            raw.deserialize(Some(&headers)).map_err(|e| row_err(line, e.to_string()))?;
        if (row.amount_x < 0.0) == (row.amount_y < 0.0) {
            return Err(IngestError::SwapRow {
                path: path.to_path_buf(),
                line,
                message: format!(
                    "exactly one amount must be negative, got {} and {}",
                    row.amount_x, row.amount_y
                ),
            });
        }
        grouped
            .entry(PoolId::new(row.pool_id))
            .or_default()
            .entry(row.block_number)
            .or_default()
            .push(row.amount_x);
    }
    let mut out: PoolBlockTrades = BTreeMap::new();
    for (pool, blocks) in grouped {
        let mut per_block = BTreeMap::new();
        for (block, amounts) in blocks {
            let trades = BlockTrades::new(amounts).map_err(|e| IngestError::SwapRow {
                path: path.to_path_buf(),
                line: 0,
                message: format!("pool {pool}, block {block}: {e}"),
            })?;
            per_block.insert(block, trades);
        }
        out.insert(pool, per_block);
    }
    Ok(out)
}

pub fn write_swap_events(path: &Path, rows: &[SwapEventRecord]) -> Result<(), IngestError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut writer = csv::Writer::from_writer(file);
    for row in rows {
        writer.serialize(row).map_err(|e| IngestError::SwapRow {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
    }
    writer.flush().map_err(io_err(path))?;
    Ok(())
}

/// Fetch-resume marker. Written atomically (temp file + rename) so a
/// crash mid-write can never leave a torn checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub last_slot: Slot,
}

pub fn read_checkpoint(path: &Path) -> Result<Option<Checkpoint>, IngestError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| IngestError::Checkpoint { path: path.to_path_buf(), message: e.to_string() })
}

pub fn write_checkpoint(path: &Path, checkpoint: Checkpoint) -> Result<(), IngestError> {
    let tmp = path.with_extension("tmp");
    let json = serde_json::to_string(&checkpoint).expect("checkpoint serialization is infallible");
    fs::write(&tmp, json).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

/// Parameters for the shipped synthetic bid fixture: `slots` slots whose
/// bid values grow linearly at per-slot rates spread evenly over
/// `(0, max_rate_wei_per_ms]`, so the 90th-percentile penalty slope is
/// exactly `0.9 × max_rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFixtureParams {
    pub slots: u64,
    pub first_slot: Slot,
    pub genesis_ms: u64,
    pub bid_interval_ms: u64,
    pub v0_wei: Wei,
    pub max_rate_wei_per_ms: f64,
    pub base_fee_wei: Wei,
    pub builders: u64,
    /// Every n-th slot also gets a huge cancelled bid near the deadline;
    /// the loader must screen these out or every statistic shifts.
    pub cancelled_every: Option<u64>,
}

impl Default for SyntheticFixtureParams {
    fn default() -> Self {
        Self {
            slots: 120,
            first_slot: 9_000_000,
            genesis_ms: 1_600_000_000_000,
            bid_interval_ms: 100,
            v0_wei: 1_000_000_000_000_000_000, // 1 ETH floor bid
            // 90th-percentile penalty slope of 0.022 ETH/s = 2.2e13 wei/ms
            max_rate_wei_per_ms: 2.2e13 / 0.9,
            base_fee_wei: 20_000_000_000,
            builders: 4,
            cancelled_every: Some(17),
        }
    }
}

/// Deterministic synthetic fixture: slot k (0-based) bids
/// `v0 + rate_k · t` every `bid_interval_ms` through the slot deadline,
/// with `rate_k = (k+1)/slots · max_rate`.
pub fn synthetic_slot_fixture(
    params: &SyntheticFixtureParams,
) -> (Vec<BidTraceRecord>, TraceMetadata) {
    let mut records = Vec::new();
    for k in 0..params.slots {
        let slot = params.first_slot + k;
        let rate = (k + 1) as f64 / params.slots as f64 * params.max_rate_wei_per_ms;
        let slot_start = params.genesis_ms + slot * SLOT_DURATION_MS;
        let mut t = 0;
        while t <= SLOT_DURATION_MS {
            records.push(BidTraceRecord {
                slot,
                timestamp_ms: slot_start + t,
                value_wei: params.v0_wei + (rate * t as f64) as Wei,
                builder_id: format!("builder-{}", (t / params.bid_interval_ms) % params.builders),
                cancelled: false,
            });
            t += params.bid_interval_ms;
        }
        if let Some(every) = params.cancelled_every {
            if k % every == 0 {
                records.push(BidTraceRecord {
                    slot,
                    timestamp_ms: slot_start + SLOT_DURATION_MS - 1,
                    value_wei: params.v0_wei * 100,
                    builder_id: "builder-cancelling".into(),
                    cancelled: true,
                });
            }
        }
    }
    let meta = TraceMetadata {
        genesis_ms: params.genesis_ms,
        default_base_fee_wei: params.base_fee_wei,
        base_fee_overrides: BTreeMap::new(),
        t0_strategy: T0Strategy::SlotDeadline,
        provenance: format!(
            "synthetic: {} slots, linear bids, rates up to {} wei/ms",
            params.slots, params.max_rate_wei_per_ms
        ),
    };
    (records, meta)
}
