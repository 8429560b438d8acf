//! Game-theoretic analysis of adversarial perturbations on small image
//! classifiers.
//!
//! The crate is layered bottom-up:
//!
//! - [`autodiff`]: tensors and reverse-mode gradients.
//! - [`model`]: a toy convolutional classifier, synthetic data and training.
//! - [`attacks`]: masked targeted attacks and border extension.
//! - [`shapley`]: exact and sampled Shapley values over abstract games.
//! - [`regional`]: Shapley attribution of image regions to attacking cost.
//! - [`interaction`]: pixel rewards, Taylor sub-pixel estimates and interactions.
//! - [`components`]: hierarchical extraction of perturbation components.

pub mod attacks;
pub mod autodiff;
pub mod components;
pub mod error;
pub mod interaction;
pub mod model;
pub mod optim;
pub mod regional;
pub mod seeding;
pub mod shapley;

pub use error::{Error, Result};
