//! Minimal chain model: accounts, nonces, fee accounting, AMM-backed trade
//! payloads, and three-phase blocks (prefix / sequenced / backrun) with
//! deterministic headers.
//!
//! Monetary amounts are integer wei; AMM token amounts are `f64` and live in
//! a separate numeric domain (see [`crate::types::AMM_REL_TOL`]).

use crate::amm::{AmmError, PoolState};
use crate::types::{AccountId, Gas, PoolId, SequencerId, Slot, TimeMs, TxId, Wei};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub const SLOT_DURATION_MS: TimeMs = 12_000;
pub const DEFAULT_GAS_LIMIT: Gas = 30_000_000;
pub const DEFAULT_GAS_TARGET: Gas = 15_000_000;

/// Which side of the pool the trader supplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TradeDirection {
    SellX,
    SellY,
}

/// An AMM trade carried by a transaction. `amount` is the quantity of the
/// sold token and must be positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub pool: PoolId,
    pub direction: TradeDirection,
    pub amount: f64,
}

impl Trade {
    /// The signed token-X amount convention used by [`PoolState::swap`].
    pub fn signed_amount(&self) -> f64 {
        match self.direction {
            TradeDirection::SellX => self.amount,
            TradeDirection::SellY => -self.amount,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TxPayload {
    Trade(Trade),
    Transfer { to: AccountId, amount: Wei },
    /// A transaction with no modeled effect beyond fees.
    Opaque,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: TxId,
    pub sender: AccountId,
    pub nonce: u64,
    pub gas_used: Gas,
    pub base_fee_per_gas: Wei,
    pub tip_per_gas: Wei,
    pub payload: TxPayload,
    /// Milliseconds since the slot start at which the tx reached the
    /// sequencer or builder.
    pub arrival_time: TimeMs,
}

impl Transaction {
    /// Total fee the sender pays: burned base portion plus the tip.
    pub fn total_fee(&self) -> Wei {
        (self.gas_used as Wei) * (self.base_fee_per_gas + self.tip_per_gas)
    }

    pub fn tip_total(&self) -> Wei {
        (self.gas_used as Wei) * self.tip_per_gas
    }
}

/// Ordered transactions sealed by a sequencer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub txs: Vec<Transaction>,
    pub sequencer_id: SequencerId,
    pub seal_time: TimeMs,
}

impl Bundle {
    pub fn total_gas(&self) -> Gas {
        self.txs.iter().map(|t| t.gas_used).sum()
    }
}

/// Where the tips of sequenced (non-prefix) transactions go.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeeRouting {
    /// Tips accrue to the block's fee recipient (the proposer).
    TipsToProposer,
    /// Tips accrue to a fixed account (e.g. the builder).
    TipsTo(AccountId),
}

/// Content hash identifying a block.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockHeader(pub [u8; 32]);

impl fmt::Display for BlockHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for BlockHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BlockHeader({self})")
    }
}

impl Serialize for BlockHeader {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BlockHeader {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.len() != 64 {
            return Err(serde::de::Error::custom("block header must be 64 hex chars"));
        }
        let mut bytes = [0u8; 32];
        for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
            let hi = (chunk[0] as char).to_digit(16);
            let lo = (chunk[1] as char).to_digit(16);
            match (hi, lo) {
                (Some(h), Some(l)) => bytes[i] = (h * 16 + l) as u8,
                _ => return Err(serde::de::Error::custom("invalid hex in block header")),
            }
        }
        Ok(BlockHeader(bytes))
    }
}

/// A block in three phases: builder prefix, sequenced transactions, and
/// appended backruns. The execution order is the concatenation of the
/// three lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub slot: Slot,
    pub prefix_txs: Vec<Transaction>,
    pub prof_txs: Vec<Transaction>,
    pub backrun_txs: Vec<Transaction>,
    /// Bid beneficiary: the account whose balance delta is the bid value.
    pub fee_recipient: AccountId,
    /// Tip recipient for `prof_txs` and `backrun_txs`; `None` routes them
    /// to `fee_recipient` as well.
    pub prof_tip_recipient: Option<AccountId>,
}

impl Block {
    pub fn empty(slot: Slot, fee_recipient: AccountId) -> Self {
        Self {
            slot,
            prefix_txs: Vec::new(),
            prof_txs: Vec::new(),
            backrun_txs: Vec::new(),
            fee_recipient,
            prof_tip_recipient: None,
        }
    }

    /// All transactions in execution order.
    pub fn full_order(&self) -> impl Iterator<Item = &Transaction> {
        self.prefix_txs.iter().chain(&self.prof_txs).chain(&self.backrun_txs)
    }

    pub fn total_gas(&self) -> Gas {
        self.full_order().map(|t| t.gas_used).sum()
    }

    /// Deterministic content hash over the canonical JSON encoding.
    pub fn header(&self) -> BlockHeader {
        let bytes = serde_json::to_vec(self).expect("block serializes");
        let digest = Sha256::digest(&bytes);
        BlockHeader(digest.into())
    }
}

/// A proposer's signature over a block header. Two distinct signed headers
/// from one proposer in one slot constitute an equivocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedHeader {
    pub header: BlockHeader,
    pub proposer_id: AccountId,
    pub slot: Slot,
}

/// Wall-clock anchoring of slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotClock {
    pub genesis_ms: TimeMs,
    pub slot_duration_ms: TimeMs,
}

impl SlotClock {
    pub fn new(genesis_ms: TimeMs) -> Self {
        Self { genesis_ms, slot_duration_ms: SLOT_DURATION_MS }
    }

    pub fn slot_start(&self, slot: Slot) -> TimeMs {
        self.genesis_ms + slot * self.slot_duration_ms
    }

    pub fn slot_end(&self, slot: Slot) -> TimeMs {
        self.slot_start(slot + 1)
    }

    pub fn slot_of(&self, time_ms: TimeMs) -> Slot {
        time_ms.saturating_sub(self.genesis_ms) / self.slot_duration_ms
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InvalidTx {
    #[error("nonce mismatch for {sender}: got {got}, expected {want}")]
    Nonce { sender: AccountId, got: u64, want: u64 },
    #[error("insufficient balance for {sender}: need {need} wei, have {have}")]
    Balance { sender: AccountId, need: Wei, have: Wei },
    #[error("transaction id {0} already applied")]
    DuplicateId(TxId),
    #[error("trade references unknown pool {0}")]
    UnknownPool(PoolId),
    #[error("trade on pool {pool} cannot execute")]
    Trade {
        pool: PoolId,
        #[source]
        source: AmmError,
    },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BlockError {
    #[error("transaction {id} at position {index} is invalid")]
    InvalidTx {
        index: usize,
        id: TxId,
        #[source]
        source: InvalidTx,
    },
}

/// Account balances, nonces, AMM pools, and the ambient base fee.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChainState {
    pub balances: BTreeMap<AccountId, Wei>,
    pub nonces: BTreeMap<AccountId, u64>,
    pub pools: BTreeMap<PoolId, PoolState>,
    pub base_fee_per_gas: Wei,
    applied_txs: BTreeSet<TxId>,
}

impl ChainState {
    pub fn new(base_fee_per_gas: Wei) -> Self {
        Self { base_fee_per_gas, ..Default::default() }
    }

    pub fn with_balance(mut self, account: AccountId, wei: Wei) -> Self {
        self.balances.insert(account, wei);
        self
    }

    pub fn with_pool(mut self, pool: PoolId, state: PoolState) -> Self {
        self.pools.insert(pool, state);
        self
    }

    pub fn balance(&self, account: &AccountId) -> Wei {
        self.balances.get(account).copied().unwrap_or(0)
    }

    pub fn nonce(&self, account: &AccountId) -> u64 {
        self.nonces.get(account).copied().unwrap_or(0)
    }

    pub fn pool(&self, id: &PoolId) -> Option<&PoolState> {
        self.pools.get(id)
    }

    pub fn has_applied(&self, id: &TxId) -> bool {
        self.applied_txs.contains(id)
    }
}

/// Apply one transaction, crediting its tip to `fee_recipient`. The base
/// fee portion is burned. Returns the new state or the reason the tx is
/// invalid at this state; the input state is never mutated.
pub fn apply_transaction(
    state: &ChainState,
    tx: &Transaction,
    fee_recipient: &AccountId,
) -> Result<ChainState, InvalidTx> {
    let want = state.nonce(&tx.sender);
    if tx.nonce != want {
        return Err(InvalidTx::Nonce { sender: tx.sender.clone(), got: tx.nonce, want });
    }
    if state.has_applied(&tx.id) {
        return Err(InvalidTx::DuplicateId(tx.id.clone()));
    }
    let transfer_amount = match &tx.payload {
        TxPayload::Transfer { amount, .. } => *amount,
        _ => 0,
    };
    let need = tx.total_fee() + transfer_amount;
    let have = state.balance(&tx.sender);
    if have < need {
        return Err(InvalidTx::Balance { sender: tx.sender.clone(), need, have });
    }
    // Trades touch a separate token domain; validate executability before
    // committing any wei movement.
    let new_pool = match &tx.payload {
        TxPayload::Trade(trade) => {
            let pool = state
                .pool(&trade.pool)
                .ok_or_else(|| InvalidTx::UnknownPool(trade.pool.clone()))?;
            let (after, _) = pool.swap(trade.signed_amount()).map_err(|source| {
                InvalidTx::Trade { pool: trade.pool.clone(), source }
            })?;
            Some((trade.pool.clone(), after))
        }
        _ => None,
    };

    let mut next = state.clone();
    next.balances.insert(tx.sender.clone(), have - need);
    let credit = |balances: &mut BTreeMap<AccountId, Wei>, account: &AccountId, wei: Wei| {
        let entry = balances.entry(account.clone()).or_insert(0);
        *entry = entry.checked_add(wei).expect("wei balance overflow");
    };
    credit(&mut next.balances, fee_recipient, tx.tip_total());
    if let TxPayload::Transfer { to, amount } = &tx.payload {
        credit(&mut next.balances, to, *amount);
    }
    if let Some((pool_id, pool)) = new_pool {
        next.pools.insert(pool_id, pool);
    }
    next.nonces.insert(tx.sender.clone(), want + 1);
    next.applied_txs.insert(tx.id.clone());
    Ok(next)
}

/// Apply a whole block in phase order. Revenue is the fee recipient's
/// balance delta, i.e. the value of the block as a bid. Any invalid
/// transaction rejects the block: producers are expected to have filtered
/// them out.
pub fn apply_block(state: &ChainState, block: &Block) -> Result<(ChainState, Wei), BlockError> {
    let before = state.balance(&block.fee_recipient);
    let mut next = state.clone();
    let prof_recipient =
        block.prof_tip_recipient.as_ref().unwrap_or(&block.fee_recipient).clone();
    let phases = [
        (&block.prefix_txs, &block.fee_recipient),
        (&block.prof_txs, &prof_recipient),
        (&block.backrun_txs, &prof_recipient),
    ];
    let mut index = 0usize;
    for (txs, recipient) in phases {
        for tx in txs.iter() {
            next = apply_transaction(&next, tx, recipient).map_err(|source| {
                BlockError::InvalidTx { index, id: tx.id.clone(), source }
            })?;
            index += 1;
        }
    }
    let after = next.balance(&block.fee_recipient);
    debug_assert!(after >= before, "fee recipient balance decreased within its own block");
    Ok((next, after.saturating_sub(before)))
}
