//! Covariate-driven stochastic differential equations: simulation, exact
//! likelihood, block-relaxation estimation, bootstrap and Bayesian inference.

pub mod bayes;
pub mod bootstrap;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod likelihood;
pub mod model;
pub mod presets;
pub mod random_effects;
pub mod seed;
pub mod simulate;
pub mod stats;

pub use error::{Result, SdeError};
