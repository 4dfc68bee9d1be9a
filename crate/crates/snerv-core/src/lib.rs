//! Spectra-preserving neural video representation.
//!
//! A per-video model fits frames in the Haar wavelet domain: the encoder
//! embeds the low-frequency subband of each frame, the decoder expands
//! the embedding back into all four subbands, and a single synthesis
//! step reconstructs the frame. The crate bundles the pieces end to
//! end: a small reverse-mode autodiff engine, the wavelet transforms,
//! SSIM/PSNR objectives, the model itself, an Adam trainer for the
//! regression / interpolation / in-painting tasks, and a
//! prune-quantize-pack compression pipeline with exact bits-per-pixel
//! accounting.

pub mod autodiff;
pub mod checkpoint;
pub mod compress;
pub mod error;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod scalar;
pub mod tensor;
pub mod trainer;
pub mod video;
pub mod wavelet;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
