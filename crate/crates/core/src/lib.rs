//! Desk-scale Bayesian federated learning.
//!
//! Clients run SGLD over a small MLP, keep the best sample as an approximate
//! MAP teacher, and distill the stream of posterior samples into a student
//! network that approximates the posterior predictive. The server aggregates
//! either by weighted averaging or by ensemble distillation on an unlabeled
//! set. Everything is a pure function of the config and a single seed.

pub mod active;
pub mod config;
pub mod data;
pub mod distill;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod federation;
pub mod json;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sgld;
pub mod tensor;

pub use error::{Error, Result};
