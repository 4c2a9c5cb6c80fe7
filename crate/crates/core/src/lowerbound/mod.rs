//! Executable worst-case constructions.
//!
//! Three gadgets make the lower-bound mechanisms runnable at desk scale:
//!
//! * [`IndistinguishablePair`] — two one-dimensional heterogeneous problems
//!   and a shifted-mean aggregator whose outputs coincide on both, pinning
//!   any method to a common trajectory with a positive gradient floor.
//! * [`StuckGadget`] — a one-dimensional stochastic problem where a
//!   zero-returning aggregator satisfies the robustness bound in expectation
//!   until the batch size crosses [`escape_threshold`].
//! * [`ChainInstance`] — a hard non-convex chain function whose coordinates
//!   can only be discovered sequentially, with a Bernoulli progress oracle
//!   and a frontier-zeroing aggregator.

pub mod chain;
pub mod gadgets;

pub use chain::{phi, psi, ChainInstance, ChainLoss, FrontierZero, FrontierZeroRecord};
pub use gadgets::{
    escape_threshold, mc_stuck_certificate, paired_floor_check, IndistinguishablePair,
    PairedFloorReport, ShiftedMean, StuckGadget, ZeroAggregator,
};
