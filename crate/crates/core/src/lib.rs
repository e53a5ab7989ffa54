//! Rare-event estimation for systems with categorical (multi-state) inputs.
//!
//! The main entry points are [`estimators::estimate`] for a single run and
//! [`oracles::replicate`] for repeated seeded runs. Limit states implement
//! [`lsf::LimitState`]; failure is `g(x) <= 0`.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN.

pub mod categorical;
pub mod error;
pub mod estimators;
pub mod fixtures;
pub mod flow;
pub mod grid;
pub mod lsf;
pub mod numeric;
pub mod oracles;
pub mod smoothing;

pub use categorical::{DirichletPrior, IndependentCategorical, StateDistribution, WeightedSampleBatch};
pub use error::{Error, Result};
pub use estimators::{estimate, EstimatorConfig, EstimatorReport, Method, Prior, WeightMode};
pub use flow::{FlowNetwork, TwoTerminalLsf};
pub use grid::{GridLsf, PowerGrid};
pub use lsf::{FnLsf, LimitState, LinearLsfSpec};
pub use oracles::{replicate, ReplicationSummary};
