//! Bid-trace analytics: what an enriched block loses by arriving late
//! (the latency penalty), how often protected-bundle fees beat that
//! penalty (the inclusion rate), and the linear latency model that ties
//! simulation time to bundle gas.

use crate::chain::SLOT_DURATION_MS;
use crate::types::{Gas, Slot, Wei};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::str::FromStr;

/// One slot's cancellation-resolved bid stream: `(in-slot ms, wei)`
/// pairs, the estimated commit time, and that slot's base fee per gas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotBids {
    pub slot: Slot,
    pub traces: Vec<(i64, Wei)>,
    pub t0_ms: i64,
    pub base_fee: Wei,
}

impl SlotBids {
    /// Highest bid at or before `cutoff` ms, if any bid exists there.
    fn max_at(&self, cutoff: f64) -> Option<Wei> {
        self.traces.iter().filter(|(t, _)| (*t as f64) <= cutoff).map(|(_, v)| *v).max()
    }
}

/// Affine simulation-latency model: a fixed overhead plus a per-gas cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyModel {
    /// Constant overhead in milliseconds.
    pub delta0_ms: f64,
    /// Marginal cost in milliseconds per million gas simulated.
    pub beta_ms_per_mgas: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self { delta0_ms: 6.25, beta_ms_per_mgas: 5.26 }
    }
}

impl LatencyModel {
    /// Modeled merge latency for a bundle of `gas` total gas.
    pub fn delta_ms(&self, gas: Gas) -> f64 {
        self.delta0_ms + (gas as f64 / 1e6) * self.beta_ms_per_mgas
    }

    pub fn validate(&self) -> Result<(), LatencyError> {
        if !(self.delta0_ms >= 0.0) || !(self.beta_ms_per_mgas >= 0.0) {
            return Err(LatencyError::BadModel);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LatencyError {
    #[error("slot {slot} has no bids")]
    EmptySlot { slot: Slot },
    #[error("no slots to analyze")]
    NoSlots,
    #[error("delta must be non-negative, got {0}")]
    NegativeDelta(f64),
    #[error("grid must be non-empty")]
    EmptyGrid,
    #[error("latency model constants must be non-negative and finite")]
    BadModel,
}

/// How much bid value the auction gained between `T0 − δ` and `T0`: the
/// revenue a proposer forgoes by committing to a block that had to be
/// frozen δ early. When no bid exists at or before `T0 − δ`, the early
/// maximum is taken as 0 — the revenue of proposing with no auction at
/// all — so the penalty is the full winning value.
pub fn latency_penalty(slot: &SlotBids, delta_ms: f64) -> Result<Wei, LatencyError> {
    if !(delta_ms >= 0.0) {
        return Err(LatencyError::NegativeDelta(delta_ms));
    }
    if slot.traces.is_empty() {
        return Err(LatencyError::EmptySlot { slot: slot.slot });
    }
    let at_commit = slot.max_at(slot.t0_ms as f64).unwrap_or(0);
    let early = slot.max_at(slot.t0_ms as f64 - delta_ms).unwrap_or(0);
    Ok(at_commit.saturating_sub(early))
}

/// Cross-slot penalty distribution at one latency value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PenaltyStats {
    pub delta_ms: f64,
    pub mean: f64,
    pub p50: f64,
    pub p75: f64,
    pub p90: f64,
    pub p99: f64,
}

/// Linearly interpolated percentile of an ascending-sorted sample.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let h = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean and {50, 75, 90, 99}th percentiles of the penalty across slots,
/// for each latency in `delta_grid`.
pub fn penalty_percentiles(
    slots: &[SlotBids],
    delta_grid: &[f64],
) -> Result<Vec<PenaltyStats>, LatencyError> {
    if slots.is_empty() {
        return Err(LatencyError::NoSlots);
    }
    if delta_grid.is_empty() {
        return Err(LatencyError::EmptyGrid);
    }
    let mut out = Vec::with_capacity(delta_grid.len());
    for &delta_ms in delta_grid {
        let mut penalties = Vec::with_capacity(slots.len());
        for slot in slots {
            penalties.push(latency_penalty(slot, delta_ms)? as f64);
        }
        penalties.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean = penalties.iter().sum::<f64>() / penalties.len() as f64;
        out.push(PenaltyStats {
            delta_ms,
            mean,
            p50: percentile(&penalties, 50.0),
            p75: percentile(&penalties, 75.0),
            p90: percentile(&penalties, 90.0),
            p99: percentile(&penalties, 99.0),
        });
    }
    Ok(out)
}

/// Fraction of slots where the bundle's fees strictly exceed the latency
/// penalty — the break-even condition for a profit-seeking proposer to
/// take the enriched block.
pub fn inclusion_rate(
    slots: &[SlotBids],
    delta_ms: f64,
    fees: impl Fn(&SlotBids) -> f64,
) -> Result<f64, LatencyError> {
    if slots.is_empty() {
        return Err(LatencyError::NoSlots);
    }
    let mut included = 0usize;
    for slot in slots {
        let penalty = latency_penalty(slot, delta_ms)? as f64;
        if fees(slot) > penalty {
            included += 1;
        }
    }
    Ok(included as f64 / slots.len() as f64)
}

/// One point of the (bundle gas, fee overhead, inclusion rate) surface.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceRow {
    pub gas: Gas,
    pub gamma: f64,
    pub alpha: f64,
}

/// Sweep bundle gas and fee overhead: each bundle size implies a latency
/// through `model`, and pays `gas · gamma · base_fee` to the proposer.
pub fn inclusion_surface(
    slots: &[SlotBids],
    gamma_grid: &[f64],
    gas_grid: &[Gas],
    model: &LatencyModel,
) -> Result<Vec<SurfaceRow>, LatencyError> {
    if gamma_grid.is_empty() || gas_grid.is_empty() {
        return Err(LatencyError::EmptyGrid);
    }
    model.validate()?;
    let mut rows = Vec::with_capacity(gamma_grid.len() * gas_grid.len());
    for &gas in gas_grid {
        let delta_ms = model.delta_ms(gas);
        for &gamma in gamma_grid {
            let alpha =
                inclusion_rate(slots, delta_ms, |s| gas as f64 * gamma * s.base_fee as f64)?;
            rows.push(SurfaceRow { gas, gamma, alpha });
        }
    }
    Ok(rows)
}

/// How to pick the commit time `T0` when it is not observed directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum T0Strategy {
    /// Timestamp of the winning (maximum-value) bid; proposers commit
    /// close to when the best bid lands. Earliest such bid on ties.
    WinningBidTimestamp,
    /// The protocol slot deadline: proposers overwhelmingly wait it out.
    SlotDeadline,
}

impl FromStr for T0Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "winning-bid-timestamp" | "winning-bid" => Ok(T0Strategy::WinningBidTimestamp),
            "slot-deadline" | "deadline" => Ok(T0Strategy::SlotDeadline),
            other => Err(format!("unknown T0 strategy: {other}")),
        }
    }
}

pub fn estimate_t0(traces: &[(i64, Wei)], strategy: T0Strategy) -> Result<i64, LatencyError> {
    match strategy {
        T0Strategy::SlotDeadline => Ok(SLOT_DURATION_MS as i64),
        T0Strategy::WinningBidTimestamp => {
            let best = traces.iter().map(|(_, v)| *v).max().ok_or(LatencyError::NoSlots)?;
            Ok(traces.iter().filter(|(_, v)| *v == best).map(|(t, _)| *t).min().unwrap())
        }
    }
}

/// Long-format penalty CSV: `delta_ms,percentile,penalty_wei` with one
/// row per (latency, statistic) pair.
pub fn write_penalty_csv<W: Write>(writer: W, stats: &[PenaltyStats]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["delta_ms", "percentile", "penalty_wei"])?;
    for s in stats {
        for (name, value) in
            [("mean", s.mean), ("p50", s.p50), ("p75", s.p75), ("p90", s.p90), ("p99", s.p99)]
        {
            w.write_record([s.delta_ms.to_string(), name.to_string(), value.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_surface_csv<W: Write>(writer: W, rows: &[SurfaceRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["gas", "gamma", "alpha"])?;
    for r in rows {
        w.write_record([r.gas.to_string(), r.gamma.to_string(), r.alpha.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
