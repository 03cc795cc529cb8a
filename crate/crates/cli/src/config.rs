//! Run configuration: one TOML file covering every subcommand, with
//! command-line flags taking precedence over file values. Every field has
//! a default, so an empty file (or none at all) is a valid configuration
//! and a run is fully described by this structure plus its input files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use prof_core::amm::SimConfig;
use prof_core::ingest::FieldMap;
use prof_core::latency::LatencyModel;
use prof_core::sim::ProtocolConfig;
use prof_core::types::Wei;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory against which relative data paths resolve; falls back to
    /// `$PROF_SIM_DATA_DIR`, then the working directory.
    pub data_dir: Option<PathBuf>,
    pub amm: SimConfig,
    pub amm_study: StudyGrid,
    pub latency: LatencyModel,
    pub latency_analysis: LatencyAnalysis,
    pub protocol: ProtocolConfig,
    pub fetch: FetchSettings,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text)
            .map_err(|msg| CliError::Config(format!("config {}: {msg}", path.display())))
    }

    /// Parse TOML text. toml's typed deserializer cannot produce the
    /// u128 wei fields, so parse to a value tree first (where integers
    /// are i64) and bridge through JSON, which can.
    pub fn parse(text: &str) -> Result<Self, String> {
        let value: toml::Value = toml::from_str(text).map_err(|e| e.to_string())?;
        let json = serde_json::to_value(value).map_err(|e| e.to_string())?;
        serde_json::from_value(json).map_err(|e| e.to_string())
    }
}

/// The demand-cap × user-count grid the utility study sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyGrid {
    pub caps: Vec<f64>,
    pub users: Vec<u32>,
}

impl Default for StudyGrid {
    fn default() -> Self {
        Self { caps: vec![0.25, 0.5, 0.75, 1.0, 2.0, 4.0, 8.0], users: vec![20, 100] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyAnalysis {
    /// Bid-trace JSONL input; its `.meta.json` sidecar must sit next to it.
    pub bids: Option<PathBuf>,
    pub penalties_out: PathBuf,
    pub surface_out: PathBuf,
    /// Merge-latency grid (ms) for the penalty percentile table.
    pub delta_grid_ms: Vec<f64>,
    /// Fee-overhead fractions for the inclusion surface.
    pub gamma_grid: Vec<f64>,
    /// Bundle sizes (gas) for the inclusion surface.
    pub gas_grid: Vec<u64>,
}

impl Default for LatencyAnalysis {
    fn default() -> Self {
        Self {
            bids: None,
            penalties_out: PathBuf::from("latency_penalties.csv"),
            surface_out: PathBuf::from("inclusion_surface.csv"),
            delta_grid_ms: vec![1.0, 5.0, 10.0, 25.0, 50.0, 85.15, 100.0, 250.0, 500.0, 1000.0],
            gamma_grid: vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0],
            gas_grid: vec![100_000, 250_000, 750_000, 3_000_000, 15_000_000, 30_000_000],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FetchSettings {
    pub endpoint: Option<String>,
    pub from_slot: Option<u64>,
    pub to_slot: Option<u64>,
    pub out: PathBuf,
    /// Checkpoint path; `<out stem>.checkpoint.json` when unset.
    pub checkpoint: Option<PathBuf>,
    pub page_slots: u64,
    pub rate_limit_ms: u64,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    /// Used for the metadata sidecar written next to a fresh download
    /// (skipped when a sidecar already exists).
    pub genesis_ms: u64,
    pub base_fee_wei: Wei,
    /// Wire names of the response fields; relays disagree on these.
    pub fields: FieldMap,
}

impl Default for FetchSettings {
    fn default() -> Self {
        Self {
            endpoint: None,
            from_slot: None,
            to_slot: None,
            out: PathBuf::from("bids.jsonl"),
            checkpoint: None,
            page_slots: 8,
            rate_limit_ms: 200,
            max_attempts: 5,
            backoff_base_ms: 250,
            genesis_ms: 0,
            base_fee_wei: 20_000_000_000,
            fields: FieldMap::default(),
        }
    }
}
