//! Simulation library for protected order flow in proposer-builder
//! separation: a small chain model, constant-product AMM economics, a relay
//! bid auction, sequencer/merger state machines, bid-latency analytics, and
//! ingest for relay bid traces and swap event data.
//!
//! The pipeline, roughly: [`ingest`] loads or synthesizes bid traces and
//! swap events; [`amm`] runs the utility study across order-flow
//! mechanisms; [`pbs`] and [`prof`] simulate the auction with a protected
//! bundle merged into builder blocks; [`latency`] quantifies what bidding
//! late costs and how likely protected transactions are to be included;
//! [`sim`] drives whole slots end to end.

pub mod amm;
pub mod chain;
pub mod ingest;
pub mod latency;
pub mod pbs;
pub mod prof;
pub mod sim;
pub mod types;
