//! Byzantine-robust distributed stochastic optimization simulator.
//!
//! All nodes are simulated in-process: a synchronous round consists of every
//! honest node drawing stochastic gradients, Byzantine nodes crafting
//! adversarial messages, and the server combining the uploads through a
//! robust aggregator. The crate provides
//!
//! * [`problems`] — distributed objectives (quadratic families, multi-class
//!   logistic regression) with exact gradients and heterogeneity measurement,
//! * [`oracles`] — unbiased stochastic gradient oracles with counter-based
//!   randomness and oracle-query accounting,
//! * [`aggregators`] — robust aggregation rules with their robustness
//!   coefficients and an empirical robustness checker,
//! * [`attacks`] — omniscient Byzantine message-crafting strategies,
//! * [`optimizers`] — DSGD/DSGDm baselines plus accelerated variance-reduced
//!   methods with restart and inexact proximal-point wrappers,
//! * [`lowerbound`] — executable worst-case gadgets: an indistinguishable
//!   problem pair, a stuck-aggregator escape threshold, and a chain function
//!   with a Bernoulli progress oracle,
//! * [`harness`] — experiment configuration, data partitioning, grid
//!   execution and metrics emission.
//!
//! Per-node work inside a round and independent cells of an experiment grid
//! run on rayon when the `parallel` feature (default) is enabled; results are
//! bit-identical regardless of worker count because all randomness is drawn
//! from stateless counter-based generators and reductions happen in node
//! order at round barriers.

pub mod aggregators;
pub mod attacks;
mod error;
pub mod harness;
pub mod lowerbound;
pub mod optimizers;
pub mod oracles;
pub mod problems;
pub mod rng;
pub mod util;

pub use error::{Error, Result};
