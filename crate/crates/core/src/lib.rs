//! Variational inference for Bayesian neural networks with a radial
//! spike-and-slab approximate posterior.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`autodiff`]: dense tensors and a reverse-mode tape.
//! - [`vi`]: samplers and KL divergences for the spike-and-slab posterior.
//! - [`layers`]: variational fully connected layers, networks and checkpoints.
//! - [`trainer`]: the ELBO loss, Adam and the training loop.
//! - [`data`]: event aggregation, synthetic data and dataset files.
//! - [`eval`]: ROC curves and their distribution, metrics and attributions.
//! - [`cli`]: the `ssbnn` command-line front end.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod layers;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod vi;

pub use error::{Error, Result};
pub use tensor::Tensor;
