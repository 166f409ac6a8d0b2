//! Causal heterogeneous graph learning for binary risk prediction on
//! patient–disease comorbidity networks.
//!
//! The pipeline is: [`synth`] (or your own CSVs via [`graph`]) →
//! [`csinlf`] imputation of the incomplete patient feature matrix →
//! [`model`] training through [`train`] → [`metrics`] and [`report`].
//! The [`cli`] module wires the same stages behind a command line.

pub mod cli;
pub mod csinlf;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod report;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
