//! Bayesian latent-class joint model for two longitudinal endpoints, with
//! posterior predictive credible regions for anomaly screening.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod likelihood;
pub mod model;
pub mod predictive;
pub mod region;
pub mod sampler;
pub mod screening;
pub mod simgen;

pub use error::{Error, Result};

#[cfg(test)]
mod test_support;
