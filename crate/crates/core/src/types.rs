//! Shared identifier newtypes and numeric aliases.
//!
//! Wei amounts are exact unsigned integers (`u128` comfortably covers any
//! realistic value; 1 ETH = 1e18 wei leaves twenty orders of magnitude of
//! headroom). Signed wei deltas use `i128`. AMM token amounts live in `f64`
//! with a 1e-9 relative tolerance and are deliberately a separate domain from
//! wei.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Wei, the discrete fee/value unit.
pub type Wei = u128;
/// Signed wei delta (balance movements, revenues).
pub type WeiDelta = i128;
/// Gas units.
pub type Gas = u64;
/// Milliseconds on the simulator's virtual clock (or within a slot).
pub type TimeMs = u64;
/// Slot number.
pub type Slot = u64;

/// Relative tolerance used for AMM (`f64`) comparisons throughout.
pub const AMM_REL_TOL: f64 = 1e-9;

macro_rules! string_id {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

string_id!(
    /// Account address (opaque string in this model).
    AccountId
);
string_id!(
    /// Unique transaction identifier.
    TxId
);
string_id!(
    /// AMM pool identifier.
    PoolId
);
string_id!(
    /// Block builder identifier.
    BuilderId
);
string_id!(
    /// PROF sequencer identifier.
    SequencerId
);
