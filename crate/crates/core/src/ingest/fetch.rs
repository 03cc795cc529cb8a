//! Paginated, checkpoint-resumable bid-trace fetching with exponential
//! backoff. The page source is a trait so tests (and offline replays)
//! can stand in for a live relay data API.

use super::{read_checkpoint, write_checkpoint, BidTraceRecord, Checkpoint, IngestError};
use crate::types::Slot;
use serde::{Deserialize, Serialize};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::time::Duration;

#[derive(Debug, thiserror::Error)]
pub enum FetchError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("HTTP status {status}")]
    Http { status: u16 },
    #[error("unusable response: {0}")]
    Parse(String),
    #[error("gave up after {attempts} attempts")]
    GaveUp {
        attempts: u32,
        #[source]
        last: Box<FetchError>,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

impl FetchError {
    /// Worth retrying: rate limits, server errors, and transport drops.
    /// Client errors and malformed bodies will not improve on retry.
    fn is_retryable(&self) -> bool {
        match self {
            FetchError::Transport(_) => true,
            FetchError::Http { status } => *status == 429 || (500..=599).contains(status),
            _ => false,
        }
    }
}

/// Supplies complete pages of bid records: everything the source has for
/// `max_slots` slots starting at `from_slot`. An empty page means the
/// range holds no bids — it still counts as fetched.
pub trait BidPageSource {
    fn fetch_slots(&mut self, from_slot: Slot, max_slots: u64)
        -> Result<Vec<BidTraceRecord>, FetchError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchConfig {
    pub from_slot: Slot,
    /// Inclusive.
    pub to_slot: Slot,
    pub page_slots: u64,
    /// Pause between successful page requests.
    pub rate_limit_ms: u64,
    /// Total tries per page, first attempt included.
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl FetchConfig {
    pub fn new(from_slot: Slot, to_slot: Slot) -> Self {
        Self {
            from_slot,
            to_slot,
            page_slots: 8,
            rate_limit_ms: 200,
            max_attempts: 5,
            backoff_base_ms: 250,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FetchReport {
    pub pages: u32,
    pub records: u64,
    /// Where this run actually started, after consulting the checkpoint.
    pub started_at: Slot,
    pub resumed: bool,
}

fn fetch_page_with_backoff(
    source: &mut dyn BidPageSource,
    from_slot: Slot,
    max_slots: u64,
    config: &FetchConfig,
    sleep: &mut impl FnMut(Duration),
) -> Result<Vec<BidTraceRecord>, FetchError> {
    let mut attempt = 0;
    loop {
        attempt += 1;
        match source.fetch_slots(from_slot, max_slots) {
            Ok(records) => return Ok(records),
            Err(e) if !e.is_retryable() => return Err(e),
            Err(e) if attempt >= config.max_attempts => {
                return Err(FetchError::GaveUp { attempts: attempt, last: Box::new(e) })
            }
            Err(_) => sleep(Duration::from_millis(config.backoff_base_ms << (attempt - 1))),
        }
    }
}

/// Pull `[from_slot, to_slot]` page by page, appending JSON lines to
/// `out_path` and advancing the checkpoint after every page — so a rerun
/// after any failure resumes exactly where it stopped, without ever
/// writing a slot twice. `sleep` is injected so tests run instantly.
pub fn fetch_bid_traces(
    source: &mut dyn BidPageSource,
    config: &FetchConfig,
    out_path: &Path,
    checkpoint_path: &Path,
    mut sleep: impl FnMut(Duration),
) -> Result<FetchReport, FetchError> {
    let resumed_from = read_checkpoint(checkpoint_path)?;
    let mut cursor = match resumed_from {
        Some(c) => config.from_slot.max(c.last_slot.saturating_add(1)),
        None => config.from_slot,
    };
    let mut report = FetchReport {
        started_at: cursor,
        resumed: resumed_from.is_some(),
        ..Default::default()
    };
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(out_path)
        .map_err(|source| IngestError::Io { path: out_path.to_path_buf(), source })?;
    while cursor <= config.to_slot {
        let page_end = (cursor + config.page_slots - 1).min(config.to_slot);
        let records =
            fetch_page_with_backoff(source, cursor, page_end - cursor + 1, config, &mut sleep)?;
        let mut page = String::new();
        for record in &records {
            // a misbehaving source cannot force duplicates or gaps: only
            // records inside the requested window are kept
            if record.slot < cursor || record.slot > page_end {
                continue;
            }
            page.push_str(&serde_json::to_string(record).expect("record serialization is infallible"));
            page.push('\n');
            report.records += 1;
        }
        file.write_all(page.as_bytes())
            .and_then(|()| file.flush())
            .map_err(|source| IngestError::Io { path: out_path.to_path_buf(), source })?;
        write_checkpoint(checkpoint_path, Checkpoint { last_slot: page_end })?;
        report.pages += 1;
        cursor = page_end + 1;
        if cursor <= config.to_slot && config.rate_limit_ms > 0 {
            sleep(Duration::from_millis(config.rate_limit_ms));
        }
    }
    Ok(report)
}

/// Response-field names for one relay's data API; the wire names vary
/// relay to relay, so they are configuration, not code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMap {
    pub slot: String,
    pub timestamp_ms: String,
    pub value_wei: String,
    pub builder_id: String,
    #[serde(default)]
    pub cancelled: Option<String>,
}

impl Default for FieldMap {
    fn default() -> Self {
        Self {
            slot: "slot".into(),
            timestamp_ms: "timestamp_ms".into(),
            value_wei: "value".into(),
            builder_id: "builder_pubkey".into(),
            cancelled: None,
        }
    }
}

/// Blocking HTTP page source: one GET per page, query parameters
/// `from_slot` and `max_slots`, JSON-array responses decoded through a
/// [`FieldMap`].
pub struct HttpSource {
    client: reqwest::blocking::Client,
    endpoint: String,
    field_map: FieldMap,
}

impl HttpSource {
    pub fn new(endpoint: impl Into<String>, field_map: FieldMap) -> Self {
        Self { client: reqwest::blocking::Client::new(), endpoint: endpoint.into(), field_map }
    }
}

fn field_u64(obj: &serde_json::Value, name: &str) -> Result<u64, FetchError> {
    let v = obj.get(name).ok_or_else(|| FetchError::Parse(format!("missing field {name:?}")))?;
    v.as_u64()
        .or_else(|| v.as_str().and_then(|s| s.parse().ok()))
        .ok_or_else(|| FetchError::Parse(format!("field {name:?} is not an integer: {v}")))
}

fn field_wei(obj: &serde_json::Value, name: &str) -> Result<u128, FetchError> {
    let v = obj.get(name).ok_or_else(|| FetchError::Parse(format!("missing field {name:?}")))?;
    v.as_u64()
        .map(u128::from)
        .or_else(|| v.as_str().and_then(|s| s.parse().ok()))
        .ok_or_else(|| FetchError::Parse(format!("field {name:?} is not a wei amount: {v}")))
}

impl BidPageSource for HttpSource {
    fn fetch_slots(
        &mut self,
        from_slot: Slot,
        max_slots: u64,
    ) -> Result<Vec<BidTraceRecord>, FetchError> {
        let sep = if self.endpoint.contains('?') { '&' } else { '?' };
        let url = format!("{}{}from_slot={}&max_slots={}", self.endpoint, sep, from_slot, max_slots);
        let response =
            self.client.get(&url).send().map_err(|e| FetchError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        if status != 200 {
            return Err(FetchError::Http { status });
        }
        let body: serde_json::Value =
            response.json().map_err(|e| FetchError::Parse(e.to_string()))?;
        let items = body
            .as_array()
            .ok_or_else(|| FetchError::Parse("expected a JSON array of bids".into()))?;
        let map = &self.field_map;
        items
            .iter()
            .map(|obj| {
                Ok(BidTraceRecord {
                    slot: field_u64(obj, &map.slot)?,
                    timestamp_ms: field_u64(obj, &map.timestamp_ms)?,
                    value_wei: field_wei(obj, &map.value_wei)?,
                    builder_id: obj
                        .get(&map.builder_id)
                        .and_then(|v| v.as_str())
                        .ok_or_else(|| {
                            FetchError::Parse(format!("missing builder field {:?}", map.builder_id))
                        })?
                        .to_string(),
                    cancelled: map
                        .cancelled
                        .as_ref()
                        .and_then(|f| obj.get(f))
                        .and_then(|v| v.as_bool())
                        .unwrap_or(false),
                })
            })
            .collect()
    }
}
