//! Simulation and parameter estimation for two-dimensional hypoelliptic
//! diffusions observed at discrete times.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod diagnose;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod io;
pub mod model;
pub mod optimize;
pub mod rng;
pub mod scheme;

pub use error::{Error, Result};
pub use model::{DriftParams, FhnParams, Model, ModelConfig, State};
pub use scheme::{CovMatrix2, LowerFactor2, Trajectory};
