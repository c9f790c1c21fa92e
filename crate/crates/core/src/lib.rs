//! Progressive structured-noise sampling for multi-view video latent editing.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense `f64` arrays, stream-addressable RNG, binary format.
//! * [`noise`]: window-level AR(1) temporal noise and the cross-view
//!   shared/independent decomposition, with closed-form correlations.
//! * [`schedule`]: beta schedules, forward diffusion, DDIM stepping and
//!   inversion, noise-predictor interface and an exact Gaussian oracle.
//! * [`viewenc`]: camera-pose MLP encoder, sinusoidal time embedding and the
//!   multi-view diffusion loss with hand-written gradients.
//! * [`metrics`]: flicker, cross-view inconsistency, PSNR, SSIM and
//!   empirical correlation.
//! * [`pipeline`]: synthetic multi-view scene, initial edit, view-consistent
//!   refinement and consensus fitting.
//! * [`config`] and [`cli`]: key=value run configuration and the command-line
//!   front end.

pub mod cli;
pub mod config;
pub mod error;
pub mod metrics;
pub mod noise;
pub mod pipeline;
pub mod schedule;
pub mod tensor;
pub mod viewenc;

pub use error::{Error, Result};
pub use tensor::{RngState, Tensor};
