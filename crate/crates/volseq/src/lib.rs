//! Volumetric sequence modeling at desk scale.
//!
//! The pipeline has two trainable stages plus an analysis stack: a
//! vector-quantized volumetric autoencoder compresses 3D volumes into a
//! discrete latent code grid, a latent ODE temporal model evolves those
//! latents continuously in time to interpolate or extrapolate a subject's
//! sequence, and a survival module turns codebook-index frequencies into
//! prognostic biomarkers scored by Cox regression and Harrell's C-index.
//! A built-in synthetic phantom generator supplies reproducible 4D data
//! with ground-truth growth dynamics and survival labels.

pub mod autodiff;
pub mod cli;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod survival;
pub mod temporal;
pub mod vq;
pub mod vqgan;

mod error;

pub use error::{Error, Result};
