//! Online estimation of total inertia and aggregated PFC setpoint of a power
//! system with dynamic regressor extension and mixing (DREM).
//!
//! The crate holds the aggregated frequency model, a multi-machine
//! ground-truth simulator, the streaming filters, the estimator itself and
//! the scenario harness behind the `inertia-drem` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod csv_io;
pub mod error;
pub mod estimator;
pub mod filters;
pub mod harness;
pub mod integrate;
pub mod metrics;
pub mod model;
pub mod truth_sim;

pub use error::{Error, Result};
pub use estimator::{EstimateRecord, Estimator, EstimatorConfig, PfcSource, RegressorSnapshot, UpdateRule};
pub use model::{AggParams, Sample, TrueTheta, TruthPoint};
pub use config::RunConfig;
