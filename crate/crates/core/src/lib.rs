//! Bayesian neural networks with the R2D2 global–local shrinkage prior,
//! trained by stochastic variational Gibbs inference, together with the
//! baseline priors, baseline inference engines and an experiment harness.

pub mod error;
pub mod harness;
pub mod autodiff_nn;
pub mod bayes_layers;
pub mod distributions;
pub mod divergence;
pub mod inference;
pub mod special_fn;

pub use error::{Error, Result};
