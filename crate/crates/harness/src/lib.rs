//! Configuration-driven experiments, cross-model comparison and run manifests on top of `clusterlab`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod compare;
pub mod config;
mod error;
pub mod experiments;
pub mod manifest;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{HarnessError, Result};
pub use experiments::run_experiment;
pub use manifest::Manifest;
