//! The kickback auction run after a proposer commits to a protected
//! block: arbitrageurs see the committed contents, bid backrun bundles
//! that route value back to the protected users, and the proposer signs
//! whichever extension wins — or falls back to the original signature.

use crate::chain::{apply_block, Block, BlockError, BlockHeader, ChainState, SignedHeader, Transaction};
use crate::types::{AccountId, Slot, TimeMs, WeiDelta};
use std::collections::BTreeSet;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProfShareError {
    #[error("signature or block does not match this slot's committed header")]
    SignatureMismatch,
    #[error("no committed block to extend")]
    NothingCommitted,
    #[error("backrun bundle does not execute on the committed block")]
    InvalidBackrun(#[source] BlockError),
    #[error("auction closed at {deadline} ms")]
    PastDeadline { deadline: TimeMs },
    #[error("cannot fall back before the deadline at {deadline} ms")]
    TooEarly { deadline: TimeMs },
    #[error("signature does not cover the offered share block")]
    WrongShareHeader,
    #[error("no submission pays the proposer")]
    NoEligibleSubmission,
    #[error("a signed block was already released for this slot")]
    AlreadyReleased,
}

/// A validated backrun bid: who sent it, what it appends, and what it
/// pays the protected users and the proposer on top of the committed
/// block.
#[derive(Debug, Clone)]
pub struct ShareSubmission {
    pub arb: AccountId,
    pub txs: Vec<Transaction>,
    pub user_revenue: WeiDelta,
    pub proposer_revenue: WeiDelta,
    pub submit_time: TimeMs,
}

/// What left the auction: exactly one signed block per slot.
#[derive(Debug, Clone)]
pub enum Released {
    /// The original committed block; no extension was signed in time.
    Prof { sig: SignedHeader, block: Arc<Block> },
    /// The winning extension, signed before the deadline.
    Share { sig: SignedHeader, block: Arc<Block> },
}

impl Released {
    pub fn header(&self) -> BlockHeader {
        match self {
            Released::Prof { sig, .. } | Released::Share { sig, .. } => sig.header,
        }
    }

    pub fn block(&self) -> &Arc<Block> {
        match self {
            Released::Prof { block, .. } | Released::Share { block, .. } => block,
        }
    }
}

/// One slot's kickback auction. The proposer's first signature is held in
/// escrow while arbitrageurs compete; whatever happens, exactly one
/// signed block is released.
#[derive(Debug, Clone)]
pub struct ProfShareState {
    slot: Slot,
    deadline_ms: TimeMs,
    base_state: Option<ChainState>,
    committed_state: Option<ChainState>,
    prof_block: Option<Arc<Block>>,
    prof_sig: Option<SignedHeader>,
    submissions: Vec<ShareSubmission>,
    share_block: Option<Arc<Block>>,
    share_sig: Option<SignedHeader>,
    released: Option<Released>,
}

impl ProfShareState {
    pub fn new(slot: Slot, deadline_ms: TimeMs) -> Self {
        Self {
            slot,
            deadline_ms,
            base_state: None,
            committed_state: None,
            prof_block: None,
            prof_sig: None,
            submissions: Vec::new(),
            share_block: None,
            share_sig: None,
            released: None,
        }
    }

    pub fn deadline_ms(&self) -> TimeMs {
        self.deadline_ms
    }

    pub fn submissions(&self) -> &[ShareSubmission] {
        &self.submissions
    }

    pub fn released(&self) -> Option<&Released> {
        self.released.as_ref()
    }

    /// Escrow the proposer's signature over the committed block and open
    /// its contents to arbitrageurs. Returns the now-public block.
    pub fn commit_prof(
        &mut self,
        sig: SignedHeader,
        block: Arc<Block>,
        base_state: ChainState,
    ) -> Result<Arc<Block>, ProfShareError> {
        if sig.slot != self.slot || block.slot != self.slot || sig.header != block.header() {
            return Err(ProfShareError::SignatureMismatch);
        }
        let (committed, _) =
            apply_block(&base_state, &block).map_err(ProfShareError::InvalidBackrun)?;
        self.base_state = Some(base_state);
        self.committed_state = Some(committed);
        self.prof_sig = Some(sig);
        self.prof_block = Some(block.clone());
        Ok(block)
    }

    fn extension_of(&self, txs: &[Transaction]) -> Block {
        let mut candidate = (**self.prof_block.as_ref().expect("checked by caller")).clone();
        candidate.backrun_txs.extend(txs.iter().cloned());
        candidate
    }

    /// Validate a backrun bundle against the committed block and record
    /// how much it pays the protected users and the proposer.
    pub fn submit_backrun(
        &mut self,
        arb: AccountId,
        txs: Vec<Transaction>,
        at: TimeMs,
    ) -> Result<&ShareSubmission, ProfShareError> {
        if at > self.deadline_ms {
            return Err(ProfShareError::PastDeadline { deadline: self.deadline_ms });
        }
        let (base, mid, block) = match (&self.base_state, &self.committed_state, &self.prof_block) {
            (Some(b), Some(m), Some(p)) => (b, m, p),
            _ => return Err(ProfShareError::NothingCommitted),
        };
        let candidate = {
            let mut c = (**block).clone();
            c.backrun_txs.extend(txs.iter().cloned());
            c
        };
        let (full, _) = apply_block(base, &candidate).map_err(ProfShareError::InvalidBackrun)?;
        let users: BTreeSet<&AccountId> = block.prof_txs.iter().map(|t| &t.sender).collect();
        let user_revenue: WeiDelta = users
            .iter()
            .map(|u| full.balance(u) as WeiDelta - mid.balance(u) as WeiDelta)
            .sum();
        let proposer_revenue = full.balance(&block.fee_recipient) as WeiDelta
            - mid.balance(&block.fee_recipient) as WeiDelta;
        self.submissions.push(ShareSubmission {
            arb,
            txs,
            user_revenue,
            proposer_revenue,
            submit_time: at,
        });
        Ok(self.submissions.last().unwrap())
    }

    /// The winner pays users the most among submissions that pay the
    /// proposer anything at all; earlier submission wins ties.
    pub fn best_submission(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, sub) in self.submissions.iter().enumerate() {
            if sub.proposer_revenue <= 0 {
                continue;
            }
            match best {
                Some(b) if self.submissions[b].user_revenue >= sub.user_revenue => {}
                _ => best = Some(i),
            }
        }
        best
    }

    /// Build the winning extension and offer its header for the
    /// proposer's second signature.
    pub fn offer_share_block(
        &mut self,
        now: TimeMs,
    ) -> Result<(BlockHeader, Arc<Block>), ProfShareError> {
        if self.released.is_some() {
            return Err(ProfShareError::AlreadyReleased);
        }
        if now > self.deadline_ms {
            return Err(ProfShareError::PastDeadline { deadline: self.deadline_ms });
        }
        if self.prof_block.is_none() {
            return Err(ProfShareError::NothingCommitted);
        }
        let winner = self.best_submission().ok_or(ProfShareError::NoEligibleSubmission)?;
        let block = Arc::new(self.extension_of(&self.submissions[winner].txs.clone()));
        let header = block.header();
        self.share_block = Some(block.clone());
        Ok((header, block))
    }

    /// Take the proposer's second signature, if it covers the offered
    /// share block and arrives before the deadline.
    pub fn accept_share_signature(
        &mut self,
        sig: SignedHeader,
        now: TimeMs,
    ) -> Result<(), ProfShareError> {
        if self.released.is_some() {
            return Err(ProfShareError::AlreadyReleased);
        }
        if now > self.deadline_ms {
            return Err(ProfShareError::PastDeadline { deadline: self.deadline_ms });
        }
        let share = self.share_block.as_ref().ok_or(ProfShareError::NoEligibleSubmission)?;
        if sig.slot != self.slot || sig.header != share.header() {
            return Err(ProfShareError::WrongShareHeader);
        }
        self.share_sig = Some(sig);
        Ok(())
    }

    /// Release exactly one signed block: the share extension if its
    /// signature arrived, otherwise — once the deadline has passed — the
    /// escrowed original. A second release attempt is a hard failure.
    pub fn finalize(&mut self, now: TimeMs) -> Result<&Released, ProfShareError> {
        if self.released.is_some() {
            return Err(ProfShareError::AlreadyReleased);
        }
        let released = if let Some(sig) = self.share_sig.clone() {
            let block = self.share_block.clone().expect("share signature implies share block");
            Released::Share { sig, block }
        } else {
            if now < self.deadline_ms {
                return Err(ProfShareError::TooEarly { deadline: self.deadline_ms });
            }
            match (self.prof_sig.clone(), self.prof_block.clone()) {
                (Some(sig), Some(block)) => Released::Prof { sig, block },
                _ => return Err(ProfShareError::NothingCommitted),
            }
        };
        self.released = Some(released);
        Ok(self.released.as_ref().unwrap())
    }
}

/// Run a whole auction: feed the submissions, offer the best extension to
/// the proposer for a second signature, and release at the deadline.
/// Returns the released block and the submissions that failed validation.
pub fn prof_share_run(
    state: &mut ProfShareState,
    submissions: Vec<(AccountId, Vec<Transaction>, TimeMs)>,
    mut proposer_sign: impl FnMut(&BlockHeader) -> Option<SignedHeader>,
) -> Result<(Released, Vec<(AccountId, ProfShareError)>), ProfShareError> {
    let mut rejected = Vec::new();
    for (arb, txs, at) in submissions {
        if let Err(e) = state.submit_backrun(arb.clone(), txs, at) {
            rejected.push((arb, e));
        }
    }
    let sign_by = state.deadline_ms().saturating_sub(1);
    if state.best_submission().is_some() {
        let (header, _) = state.offer_share_block(sign_by)?;
        if let Some(sig) = proposer_sign(&header) {
            state.accept_share_signature(sig, sign_by)?;
        }
    }
    let released = state.finalize(state.deadline_ms())?.clone();
    Ok((released, rejected))
}
