//! Test-time dynamic image fusion.
//!
//! The crate is organised bottom-up:
//!
//! * [`image`] holds the raster types, PNG/PGM I/O and the shared kernels
//!   (histogram, Sobel, Gaussian blur).
//! * [`codec`] provides encoder/decoder backends: an identity codec, a
//!   quantized band-pass pyramid and a small trainable convolutional
//!   autoencoder with exact gradients.
//! * [`engine`] computes per-source reconstruction loss maps, turns them into
//!   per-pixel fusion weights (relative dominability and its ablation
//!   variants) and fuses features.
//! * [`metrics`] implements EN, CE, SCD, SD, AG, EI, SF and SSIM.
//! * [`theory`] checks the covariance decomposition of the fusion
//!   generalization bound on real data.
//! * [`synth`] generates seeded multi-source scenes and corruptions.

pub mod codec;
pub mod engine;
mod error;
pub mod image;
pub mod kv;
pub mod metrics;
pub mod rng;
pub mod sum;
pub mod synth;
pub mod theory;

pub use error::{Error, Result};
