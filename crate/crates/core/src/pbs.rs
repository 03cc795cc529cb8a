//! Relay-side block auction: builder bid intake (pessimistic or
//! optimistic), cancellation, header serving, commit/release with
//! equivocation detection, and a synthetic builder bid stream.

use crate::chain::{apply_block, Block, BlockError, BlockHeader, ChainState, SignedHeader};
use crate::types::{BuilderId, Slot, TimeMs, Wei};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

/// A builder's bid: a full block plus the value it claims to pay the
/// proposer. In pessimistic mode the relay recomputes the value itself.
#[derive(Debug, Clone)]
pub struct Bid {
    pub builder_id: BuilderId,
    pub slot: Slot,
    pub value: Wei,
    /// Relay-clock ms at which the bid was received. Any consistent
    /// clock works: unit tests use in-slot offsets, the protocol
    /// simulator a global virtual time.
    pub timestamp_ms: TimeMs,
    pub block: Arc<Block>,
}

/// A merger-produced bid: header and value only — the block contents stay
/// inside the merger until the proposer commits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrichedBid {
    pub header: BlockHeader,
    pub slot: Slot,
    pub value: Wei,
    /// When the relay may start serving this bid to proposers.
    pub reveal_time_ms: TimeMs,
    /// When the prefix it was built on was handed to the merger; used as a
    /// deterministic tie-break between equal-value enriched bids.
    pub prefix_submit_time_ms: TimeMs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelayMode {
    /// Re-execute every submitted block and check the declared value.
    Pessimistic,
    /// Trust declared values; validation happens post hoc, if at all.
    Optimistic,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SubmitRejected {
    #[error("bid is for slot {got}, relay handles slot {want}")]
    WrongSlot { got: Slot, want: Slot },
    #[error("block does not execute")]
    InvalidBlock(#[source] BlockError),
    #[error("declared value {declared} wei does not match recomputed revenue {actual}")]
    ValueMismatch { declared: Wei, actual: Wei },
    #[error("relay no longer accepts bids: an enriched bid was already revealed")]
    PostReveal,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CommitError {
    #[error("header was never served for this slot")]
    UnknownHeader,
    #[error("slot already committed to a different header (equivocation logged)")]
    Equivocation { first: BlockHeader, second: BlockHeader },
}

/// What a successful commit hands back. Enriched blocks are not stored at
/// the relay, so their contents must be fetched from the merger that
/// produced them.
#[derive(Debug, Clone)]
pub struct CommitOutcome {
    pub header: BlockHeader,
    pub enriched: bool,
    pub contents: Option<Arc<Block>>,
}

/// A served (header, value) pair as returned to proposers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServedHeader {
    pub header: BlockHeader,
    pub value: Wei,
    pub enriched: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Equivocation {
    pub slot: Slot,
    pub proposer_id: String,
    pub first: BlockHeader,
    pub second: BlockHeader,
}

/// Post-hoc audit finding for optimistically accepted bids.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditFlag {
    pub builder_id: BuilderId,
    pub header: BlockHeader,
    pub declared_value: Wei,
    pub problem: String,
}

#[derive(Debug, Clone)]
struct StoredBid {
    bid: Bid,
    cancelled: bool,
}

#[derive(Debug, Clone)]
enum ServedKind {
    Pbs(Arc<Block>),
    Enriched,
}

/// Single-slot relay auction state.
///
/// Bids accumulate as a multiset; cancellation tombstones a builder's
/// outstanding bids. The best bid is always computed over live bids only.
#[derive(Debug, Clone)]
pub struct RelayState {
    pub slot: Slot,
    pub mode: RelayMode,
    /// When set, no new bids are accepted once an enriched bid has been
    /// served to a proposer (the builder-hosted merger deployment).
    pub reject_new_bids_after_reveal: bool,
    base_state: ChainState,
    bids: Vec<StoredBid>,
    prof_bid: Option<EnrichedBid>,
    served: BTreeMap<BlockHeader, ServedKind>,
    released: Option<CommitOutcome>,
    enriched_revealed: bool,
    equivocations: Vec<Equivocation>,
}

impl RelayState {
    pub fn new(slot: Slot, mode: RelayMode, base_state: ChainState) -> Self {
        Self {
            slot,
            mode,
            reject_new_bids_after_reveal: false,
            base_state,
            bids: Vec::new(),
            prof_bid: None,
            served: BTreeMap::new(),
            released: None,
            enriched_revealed: false,
            equivocations: Vec::new(),
        }
    }

    pub fn with_reject_after_reveal(mut self, flag: bool) -> Self {
        self.reject_new_bids_after_reveal = flag;
        self
    }

    pub fn base_state(&self) -> &ChainState {
        &self.base_state
    }

    pub fn equivocations(&self) -> &[Equivocation] {
        &self.equivocations
    }

    pub fn prof_bid(&self) -> Option<&EnrichedBid> {
        self.prof_bid.as_ref()
    }

    /// Whether an enriched bid has been served to a proposer.
    pub fn enriched_revealed(&self) -> bool {
        self.enriched_revealed
    }

    /// Accept or reject a builder bid. Pessimistic relays re-execute the
    /// block and require the declared value to match its revenue exactly.
    pub fn submit_bid(&mut self, bid: Bid) -> Result<(), SubmitRejected> {
        if bid.slot != self.slot {
            return Err(SubmitRejected::WrongSlot { got: bid.slot, want: self.slot });
        }
        if self.reject_new_bids_after_reveal && self.enriched_revealed {
            return Err(SubmitRejected::PostReveal);
        }
        if self.mode == RelayMode::Pessimistic {
            let (_, revenue) =
                apply_block(&self.base_state, &bid.block).map_err(SubmitRejected::InvalidBlock)?;
            if revenue != bid.value {
                return Err(SubmitRejected::ValueMismatch { declared: bid.value, actual: revenue });
            }
        }
        self.bids.push(StoredBid { bid, cancelled: false });
        Ok(())
    }

    /// Tombstone all of a builder's outstanding bids. Bids submitted after
    /// the cancellation are unaffected.
    pub fn cancel_bids(&mut self, builder_id: &BuilderId) -> usize {
        let mut n = 0;
        for stored in self.bids.iter_mut() {
            if &stored.bid.builder_id == builder_id && !stored.cancelled {
                stored.cancelled = true;
                n += 1;
            }
        }
        n
    }

    /// Store an enriched bid, keeping the more valuable of old and new
    /// (ties go to the earlier prefix submission).
    pub fn submit_enriched(&mut self, bid: EnrichedBid) -> Result<(), SubmitRejected> {
        if bid.slot != self.slot {
            return Err(SubmitRejected::WrongSlot { got: bid.slot, want: self.slot });
        }
        if self.reject_new_bids_after_reveal && self.enriched_revealed {
            return Err(SubmitRejected::PostReveal);
        }
        let replace = match &self.prof_bid {
            None => true,
            Some(cur) => {
                bid.value > cur.value
                    || (bid.value == cur.value
                        && bid.prefix_submit_time_ms < cur.prefix_submit_time_ms)
            }
        };
        if replace {
            self.prof_bid = Some(bid);
        }
        Ok(())
    }

    /// Highest-value live builder bid visible at `at`. Ties break toward
    /// the earlier timestamp, then the lexicographically smaller builder id.
    pub fn best_bid(&self, at: TimeMs) -> Option<&Bid> {
        self.bids
            .iter()
            .filter(|s| !s.cancelled && s.bid.timestamp_ms <= at)
            .map(|s| &s.bid)
            .min_by(|a, b| {
                b.value
                    .cmp(&a.value)
                    .then(a.timestamp_ms.cmp(&b.timestamp_ms))
                    .then(a.builder_id.cmp(&b.builder_id))
            })
    }

    /// Serve the best available header at `at`: the max over the builder
    /// auction and the enriched bid once its reveal time has passed. Ties
    /// go to the enriched bid (the proposer is indifferent on value).
    /// Serving an enriched bid marks it revealed.
    pub fn get_header(&mut self, at: TimeMs) -> Option<ServedHeader> {
        let pbs = self.best_bid(at).map(|b| ServedHeader {
            header: b.block.header(),
            value: b.value,
            enriched: false,
        });
        let prof = self
            .prof_bid
            .as_ref()
            .filter(|e| e.reveal_time_ms <= at)
            .map(|e| ServedHeader { header: e.header, value: e.value, enriched: true });
        let chosen = match (pbs, prof) {
            (Some(p), Some(e)) => {
                if e.value >= p.value {
                    e
                } else {
                    p
                }
            }
            (Some(p), None) => p,
            (None, Some(e)) => e,
            (None, None) => return None,
        };
        if chosen.enriched {
            self.enriched_revealed = true;
            self.served.insert(chosen.header, ServedKind::Enriched);
        } else {
            let block = self
                .bids
                .iter()
                .find(|s| s.bid.block.header() == chosen.header)
                .map(|s| Arc::clone(&s.bid.block))
                .expect("served pbs header has a backing bid");
            self.served.insert(chosen.header, ServedKind::Pbs(block));
        }
        Some(chosen)
    }

    /// Exchange a signed header for block contents. Only headers this
    /// relay previously served qualify; a second distinct header for the
    /// slot is logged as an equivocation and rejected; replaying the same
    /// commit is idempotent.
    pub fn commit_header(&mut self, signed: &SignedHeader) -> Result<CommitOutcome, CommitError> {
        if let Some(done) = &self.released {
            if done.header == signed.header {
                return Ok(done.clone());
            }
            let ev = Equivocation {
                slot: self.slot,
                proposer_id: signed.proposer_id.as_str().to_string(),
                first: done.header,
                second: signed.header,
            };
            self.equivocations.push(ev);
            return Err(CommitError::Equivocation {
                first: self.released.as_ref().expect("just checked").header,
                second: signed.header,
            });
        }
        let kind = self.served.get(&signed.header).ok_or(CommitError::UnknownHeader)?;
        let outcome = match kind {
            ServedKind::Pbs(block) => CommitOutcome {
                header: signed.header,
                enriched: false,
                contents: Some(Arc::clone(block)),
            },
            ServedKind::Enriched => {
                CommitOutcome { header: signed.header, enriched: true, contents: None }
            }
        };
        self.released = Some(outcome.clone());
        Ok(outcome)
    }

    pub fn released(&self) -> Option<&CommitOutcome> {
        self.released.as_ref()
    }

    /// Re-execute optimistically accepted bids and flag the liars. Returns
    /// one flag per live bid whose block is invalid or whose declared value
    /// differs from its recomputed revenue.
    pub fn audit_post_hoc(&self) -> Vec<AuditFlag> {
        let mut flags = Vec::new();
        for stored in self.bids.iter().filter(|s| !s.cancelled) {
            let bid = &stored.bid;
            match apply_block(&self.base_state, &bid.block) {
                Ok((_, revenue)) if revenue == bid.value => {}
                Ok((_, revenue)) => flags.push(AuditFlag {
                    builder_id: bid.builder_id.clone(),
                    header: bid.block.header(),
                    declared_value: bid.value,
                    problem: format!("declared {} wei, block pays {revenue}", bid.value),
                }),
                Err(e) => flags.push(AuditFlag {
                    builder_id: bid.builder_id.clone(),
                    header: bid.block.header(),
                    declared_value: bid.value,
                    problem: format!("block does not execute: {e}"),
                }),
            }
        }
        flags
    }
}

/// Proposer's decision rule over served headers: the index of the
/// highest-value option, earliest listed on ties.
pub fn proposer_decide(options: &[(BlockHeader, Wei)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (_, value)) in options.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(j) if *value > options[j].1 => best = Some(i),
            _ => {}
        }
    }
    best
}

/// Synthetic per-slot builder bid schedule:
/// `value(t) = v0 + drift·t + surge·[t > surge_at] + noise`, emitted on a
/// fixed cadence for each builder. Timestamps are non-decreasing per
/// builder by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BidStreamModel {
    pub builders: Vec<BuilderId>,
    pub v0_wei: Wei,
    pub drift_wei_per_ms: Wei,
    pub surge_wei: Wei,
    pub surge_at_ms: TimeMs,
    pub noise_std_wei: f64,
    pub bid_interval_ms: TimeMs,
}

impl Default for BidStreamModel {
    fn default() -> Self {
        Self {
            builders: vec![BuilderId::new("builder-a"), BuilderId::new("builder-b")],
            v0_wei: 20_000_000_000_000_000, // 0.02 ETH
            drift_wei_per_ms: 2_000_000_000_000, // 0.024 ETH over a slot
            surge_wei: 10_000_000_000_000_000, // late-bidding jump
            surge_at_ms: 11_000,
            noise_std_wei: 1_000_000_000_000_000.0,
            bid_interval_ms: 500,
        }
    }
}

/// One entry in a synthetic bid schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduledBid {
    pub builder_id: BuilderId,
    pub timestamp_ms: TimeMs,
    pub value: Wei,
}

impl BidStreamModel {
    /// Generate the slot's bid schedule, sorted by time then builder.
    pub fn schedule(&self, rng: &mut impl Rng) -> Vec<ScheduledBid> {
        let noise = Normal::new(0.0, self.noise_std_wei.max(f64::MIN_POSITIVE))
            .expect("std is non-negative and finite");
        let mut out = Vec::new();
        let mut t = 0;
        while t <= crate::chain::SLOT_DURATION_MS {
            for builder in &self.builders {
                let base = self.v0_wei as i128
                    + (self.drift_wei_per_ms as i128) * (t as i128)
                    + if t > self.surge_at_ms { self.surge_wei as i128 } else { 0 };
                let jitter = if self.noise_std_wei > 0.0 { noise.sample(rng) as i128 } else { 0 };
                let value = (base + jitter).max(0) as Wei;
                out.push(ScheduledBid { builder_id: builder.clone(), timestamp_ms: t, value });
            }
            t += self.bid_interval_ms.max(1);
        }
        out
    }
}
