//! Differentially private distributed optimization over undirected networks.
//!
//! Agents hold quadratic costs and exchange only Laplace-perturbed states. The crate
//! simulates the private gradient-tracking scheme and its DGD comparison dynamics,
//! audits sensitivity on adjacent problems, evaluates the mean-square comparison system
//! and the accuracy bound, and measures leakage with a kNN mutual-information estimator.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod engine;
pub mod error;
pub mod harness;
pub mod objective;
pub mod privacy_eval;
pub mod rng;
pub mod schedule;
pub mod stats;
pub mod topology;

pub use engine::{run, simulate, Algorithm, Dynamics, Method, NetworkState, Observation, Trace};
pub use error::{Error, Result};
pub use harness::{load_config, run_experiment, ExperimentConfig};
pub use objective::{AdjacentPair, Problem, QuadraticCost};
pub use schedule::ScheduleParams;
pub use topology::{Graph, WeightMatrix};
pub use nalgebra;
