//! Fairness-aware submodular client selection for federated learning.
//!
//! The crate is organised bottom-up:
//!
//! - [`submodular`]: generic set-function machinery (marginal gains, greedy and
//!   stochastic greedy, brute-force oracle, property verifiers).
//! - [`objectives`]: the concrete selection objectives (facility location,
//!   truncated fairness, SubTrunc, the union penalty and UnionFL) plus the
//!   random and Power-of-Choice baselines.
//! - [`model`] and [`engine`]: differentiable desk-scale models and the FedAvg
//!   training loop with per-round client selection.
//! - [`data`] and [`idx`]: synthetic non-iid data, shard partitioning and the
//!   IDX binary format.
//! - [`metrics`]: global evaluation, client dissimilarity, participation
//!   statistics and the output-round distribution used for convergence checks.
//! - [`experiment`] and [`suites`]: configuration, CSV emission, sweeps and the
//!   property suites behind the command line driver.

pub mod data;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod idx;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod submodular;
pub mod suites;

pub use error::{Error, Result};
