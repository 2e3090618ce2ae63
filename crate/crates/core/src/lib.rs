//! Reflected-diffusion generative modelling on the unit cube `[0,1]^D`.
//!
//! The forward process is reflected Brownian motion, simulated exactly by
//! folding a free Brownian path back into the cube. Its transition density is
//! an image series, which gives closed-form scores for point-cloud targets and
//! quadrature scores for densities on affine slices. Learned scores are small
//! clipped MLPs trained by denoising score matching on a geometric time grid,
//! and samples come from an Euler scheme for the reversed process that folds
//! after each step.

pub mod error;
pub mod experiment;
pub mod forward;
pub mod geometry;
pub mod kernel;
pub mod metrics;
pub mod net;
pub mod quadrature;
pub mod rng;
pub mod sampler;
pub mod score;
pub mod targets;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
