//! Sequential subcohort selection for longitudinal covariate measurements in
//! survival follow-up studies.
//!
//! The library covers the full loop: synthetic cohort generation, piecewise
//! Weibull proportional-hazards modeling with Bayesian data augmentation of
//! design-missing covariates, mixed observed/expected information matrices,
//! a D-optimality criterion on the covariate-effect block, greedy subcohort
//! selection, and a config-driven experiment harness comparing selection
//! strategies.
//!
//! With the default `parallel` feature, replicate- and candidate-level loops
//! fan out over a rayon pool; disabling it yields a sequential build with
//! byte-identical outputs.

pub mod cohort;
pub mod covariate;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod information;
pub mod mcmc;
pub mod rng;
pub mod selection;
pub mod sim;
pub mod weibull;

pub use error::{Error, Result};
