//! Training and evaluation framework for robust iterated video prediction.
//!
//! The pieces, bottom up:
//!
//! - [`autodiff`] — a small reverse-mode tape over `f64` tensors; every
//!   gradient in the crate comes from it.
//! - [`losses`] — Gaussian uncertainty objectives (plain and stabilised),
//!   the deep perceptual loss, and their weighted combination.
//! - [`features`] — pluggable convolutional backbones providing multi-layer
//!   feature taps and a video embedder.
//! - [`predictor`] — the encoder / variational bottleneck / decoder model
//!   with residual or attention skip connections and a Gaussian output head.
//! - [`data`] — directory and synthetic sprite datasets with joint window
//!   transforms.
//! - [`training`] — the cycle-training curriculum: scheduled self-feeding of
//!   predictions with gradients severed between steps.
//! - [`metrics`] — MSE / PSNR, a perceptual distance, and Fréchet video
//!   distance.
//! - [`config`] / [`cli`] — declarative run configuration and the command
//!   surface (`train`, `rollout`, `evaluate`, `plot`).

pub mod archive;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod features;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod plotting;
pub mod predictor;
pub mod training;

pub use error::{Error, Result};
