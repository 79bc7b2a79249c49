//! Kolmogorov-Arnold network layers with a continual-learning harness.
//!
//! The crate provides, bottom to top:
//! - [`autodiff`]: a minimal reverse-mode tape over dense f32 tensors;
//! - [`spline`]: B-spline / Gaussian-RBF basis evaluation on uniform grids;
//! - [`layers`]: MLP, spline-KAN and RBF-KAN (FastKAN-style) linear layers;
//! - [`vit`]: a small from-scratch Vision Transformer whose per-block
//!   feed-forward can be swapped among the three layer families;
//! - [`optim`]: Adam and cross-entropy helpers;
//! - [`data`]: MNIST IDX / CIFAR-100 binary loaders and class-split tasks;
//! - [`continual`]: the sequential-task trainer with experience replay;
//! - [`metrics`]: accuracy-matrix metrics (last-task accuracy, average
//!   incremental accuracy, global forgetting);
//! - [`config`] / [`cli`]: config-driven experiment runner.
//!
//! See the `examples/` directory for one runnable walkthrough per capability.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod continual;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod optim;
pub mod report;
pub mod rng;
pub mod serialize;
pub mod spline;
pub mod tensor;
pub mod vit;

pub use error::{Error, Result};
pub use tensor::Tensor;
