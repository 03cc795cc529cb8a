//! Constant-product AMM math: swaps, optimal backrunning against a static
//! reference market, and the demand/variability metrics used by the
//! mechanism study and the swap-data histogram.
//!
//! Trade convention (used everywhere in this crate): a trade is a signed
//! token-X amount. `amt > 0` means the user sells `amt` of X into the pool;
//! `amt < 0` means the user sells `|amt|` of Y into the pool (i.e. buys X).
//! Amounts are input-denominated on both sides, which keeps sell-X and
//! sell-Y trades exactly symmetric on a balanced pool.

mod mechanism;

pub use mechanism::{
    run_mechanism, run_study, run_study_cells, sample_block_trades, write_study_csv, Mechanism,
    MechanismOutcome, SimConfig, StudyCell, StudyRow,
};

use crate::types::PoolId;
use std::collections::BTreeMap;
use std::ops::Range;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AmmError {
    #[error("pool reserves must be positive and finite (got {x}, {y})")]
    BadReserves { x: f64, y: f64 },
    #[error("trade amount must be finite (got {0})")]
    NonFiniteTrade(f64),
    #[error("trade of {amount} would drain the pool ({x}, {y})")]
    DrainsReserve { amount: f64, x: f64, y: f64 },
    #[error("operation needs at least one trade")]
    EmptyTrades,
    #[error("trade amounts must be non-zero and finite (got {0})")]
    BadTradeAmount(f64),
    #[error("window size must be positive and block range must lie inside the stream")]
    BadWindow,
    #[error("bin edges must be strictly increasing with at least two entries")]
    BadBins,
    #[error(
        "no trade sequence within demand cap {cap} after {attempts} attempts (mean users {mean_users})"
    )]
    SamplerGaveUp { attempts: u32, cap: f64, mean_users: u32 },
    #[error("config: {0}")]
    BadConfig(String),
}

/// Constant-product pool: reserves of token X and token Y.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PoolState {
    pub reserve_x: f64,
    pub reserve_y: f64,
}

impl PoolState {
    pub fn new(reserve_x: f64, reserve_y: f64) -> Result<Self, AmmError> {
        if !(reserve_x.is_finite() && reserve_y.is_finite() && reserve_x > 0.0 && reserve_y > 0.0)
        {
            return Err(AmmError::BadReserves { x: reserve_x, y: reserve_y });
        }
        Ok(Self { reserve_x, reserve_y })
    }

    /// Invariant product of the two reserves.
    pub fn product(&self) -> f64 {
        self.reserve_x * self.reserve_y
    }

    /// Marginal price of X in Y.
    pub fn price(&self) -> f64 {
        self.reserve_y / self.reserve_x
    }

    /// Execute a signed trade against the pool. Positive = sell that much X,
    /// negative = sell that much Y. Returns the new pool and the amount of
    /// counter-token the trader receives (Y for positive trades, X for
    /// negative ones). A zero trade is a no-op.
    pub fn swap(&self, amount: f64) -> Result<(PoolState, f64), AmmError> {
        if !amount.is_finite() {
            return Err(AmmError::NonFiniteTrade(amount));
        }
        if amount == 0.0 {
            return Ok((*self, 0.0));
        }
        // The output is computed in factored form, y·a/(x+a) rather than
        // y − x·y/(x+a): the two are algebraically equal, but the factored
        // form avoids cancellation between reserve-scale quantities and
        // keeps the received amount accurate to its own scale.
        let (new_x, new_y, received) = if amount > 0.0 {
            let new_x = self.reserve_x + amount;
            let received = self.reserve_y * amount / new_x;
            (new_x, self.reserve_y - received, received)
        } else {
            let new_y = self.reserve_y + (-amount);
            let received = self.reserve_x * (-amount) / new_y;
            (self.reserve_x - received, new_y, received)
        };
        // Selling into a constant-product pool cannot empty the other side;
        // a non-positive reserve here means the inputs were degenerate.
        if !(new_x.is_finite() && new_y.is_finite() && new_x > 0.0 && new_y > 0.0) {
            return Err(AmmError::DrainsReserve {
                amount,
                x: self.reserve_x,
                y: self.reserve_y,
            });
        }
        Ok((PoolState { reserve_x: new_x, reserve_y: new_y }, received))
    }
}

/// Infinite-liquidity reference exchange quoting a fixed price of X in Y.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StaticMarket {
    pub price: f64,
}

/// Result of planning the profit-maximizing arbitrage against a pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backrun {
    /// Signed trade (same convention as [`PoolState::swap`]) that moves the
    /// pool's marginal price to the static market's. Zero when already there.
    pub trade: f64,
    /// Arbitrage profit valued in Y at the static price, before any kickback.
    pub profit: f64,
}

/// Plan the single trade that equalizes the pool's marginal price with the
/// static market, buying the leg back (or sourcing it) at the static price.
///
/// Derivation: the post-trade X reserve that prices the pool at `P` is
/// `sqrt(K / P)`; if the pool holds less X than that, the arbitrageur sells
/// X into the pool, otherwise it sells Y until the Y reserve is `sqrt(K·P)`.
pub fn optimal_backrun(pool: &PoolState, market: &StaticMarket) -> Backrun {
    let k = pool.product();
    let p = market.price;
    let x_target = (k / p).sqrt();
    let trade = if x_target > pool.reserve_x {
        x_target - pool.reserve_x // pool price above P: sell X into it
    } else {
        let y_target = (k * p).sqrt();
        -(y_target - pool.reserve_y).max(0.0) // pool price below P: sell Y
    };
    if trade == 0.0 {
        return Backrun { trade: 0.0, profit: 0.0 };
    }
    let (_, received) = pool
        .swap(trade)
        .expect("backrun trade is finite and input-denominated");
    let profit = if trade > 0.0 {
        received - trade * p // received Y, bought the X at P
    } else {
        received * p + trade // received X sold at P, spent |trade| Y
    };
    Backrun { trade, profit }
}

/// One block's worth of user trades, in execution order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BlockTrades {
    pub amounts: Vec<f64>,
}

impl BlockTrades {
    pub fn new(amounts: Vec<f64>) -> Result<Self, AmmError> {
        for &a in &amounts {
            if !a.is_finite() || a == 0.0 {
                return Err(AmmError::BadTradeAmount(a));
            }
        }
        Ok(Self { amounts })
    }

    pub fn len(&self) -> usize {
        self.amounts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amounts.is_empty()
    }
}

/// Net excess demand for X: absolute value of the signed trade sum.
pub fn net_demand(trades: &BlockTrades) -> f64 {
    trades.amounts.iter().sum::<f64>().abs()
}

/// Population standard deviation of trade volumes (absolute sizes).
pub fn variability(trades: &BlockTrades) -> Result<f64, AmmError> {
    if trades.is_empty() {
        return Err(AmmError::EmptyTrades);
    }
    Ok(population_std(trades.amounts.iter().map(|a| a.abs())))
}

/// Net demand over variability; `None` when the variability is zero (all
/// trades the same size) or there are no trades.
pub fn demand_ratio(trades: &BlockTrades) -> Option<f64> {
    let v = variability(trades).ok()?;
    if v == 0.0 {
        return None;
    }
    Some(net_demand(trades) / v)
}

fn population_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    if n == 0 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    var.sqrt()
}

/// Standard deviation of swap volumes over a window of `s` swaps centered on
/// a block. `volumes` is the pool's full swap-volume stream in chain order
/// and `block` indexes the block's own swaps within it. A block with more
/// than `s` swaps uses only its own swaps; near the ends of the stream the
/// window spills to whichever side has room.
pub fn windowed_variability(
    volumes: &[f64],
    block: Range<usize>,
    s: usize,
) -> Result<f64, AmmError> {
    if s == 0 || block.start > block.end || block.end > volumes.len() {
        return Err(AmmError::BadWindow);
    }
    let n = block.len();
    if n == 0 {
        return Err(AmmError::EmptyTrades);
    }
    let window = if n >= s {
        block
    } else {
        let left_want = (s - n) / 2;
        let right_want = (s - n) - left_want;
        let start = block.start.saturating_sub(left_want);
        let left_short = left_want - (block.start - start);
        let end = (block.end + right_want + left_short).min(volumes.len());
        let right_short = block.end + right_want + left_short - end;
        let start = start.saturating_sub(right_short);
        start..end
    };
    Ok(population_std(volumes[window].iter().map(|v| v.abs())))
}

/// Swap data grouped per pool and per block, as produced by the ingest layer.
pub type PoolBlockTrades = BTreeMap<PoolId, BTreeMap<u64, BlockTrades>>;

/// Demand-ratio histogram averaged across pools.
///
/// For each pool, every block with a defined demand ratio (windowed
/// variability > 0) is assigned to a half-open bin `[edges[i], edges[i+1])`
/// and the per-pool bin percentages are computed over that pool's defined
/// blocks; the result is the arithmetic mean of the per-pool percentages.
/// Pools with no swaps (or no defined ratios) are skipped; if nothing
/// contributes, the histogram is empty. Ratios outside the edges count
/// toward the denominator but no bin — pass `f64::INFINITY` as the last
/// edge to make the bins exhaustive.
pub fn demand_ratio_histogram(
    data: &PoolBlockTrades,
    s: usize,
    edges: &[f64],
) -> Result<Vec<f64>, AmmError> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(AmmError::BadBins);
    }
    let nbins = edges.len() - 1;
    let mut pool_pcts: Vec<Vec<f64>> = Vec::new();
    for blocks in data.values() {
        let mut volumes = Vec::new();
        let mut spans = Vec::new();
        for trades in blocks.values() {
            let start = volumes.len();
            volumes.extend(trades.amounts.iter().map(|a| a.abs()));
            spans.push((start..volumes.len(), trades));
        }
        let mut counts = vec![0usize; nbins];
        let mut defined = 0usize;
        for (span, trades) in spans {
            if span.is_empty() {
                continue;
            }
            let v = windowed_variability(&volumes, span, s)?;
            if v == 0.0 {
                continue;
            }
            let ratio = net_demand(trades) / v;
            defined += 1;
            if let Some(bin) = edges.windows(2).position(|w| ratio >= w[0] && ratio < w[1]) {
                counts[bin] += 1;
            }
        }
        if defined > 0 {
            pool_pcts.push(
                counts.iter().map(|&c| 100.0 * c as f64 / defined as f64).collect(),
            );
        }
    }
    if pool_pcts.is_empty() {
        return Ok(Vec::new());
    }
    let mut avg = vec![0.0; nbins];
    for pcts in &pool_pcts {
        for (a, p) in avg.iter_mut().zip(pcts) {
            *a += p;
        }
    }
    for a in avg.iter_mut() {
        *a /= pool_pcts.len() as f64;
    }
    Ok(avg)
}
