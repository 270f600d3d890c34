//! Super-resolution for variational degradations with per-pixel dynamic
//! convolution.
//!
//! The crate covers the whole pipeline at desk scale:
//!
//! * [`tensor`]: NCHW tensors, a recorded op graph with reverse-mode
//!   gradients, Adam, and the `.ten` / checkpoint formats.
//! * [`dynconv`]: dynamic convolution with and without upsampling.
//! * [`degrade`]: blur, bicubic downsampling, noise, spatially-variant
//!   synthesis, and the PCA degradation map.
//! * [`model`]: the network, its configurations and the multistage loss.
//! * [`train`], [`metrics`], [`viz`]: training, PSNR/SSIM on Y, and kernel
//!   visualisation.

pub mod bench;
pub mod degrade;
pub mod dynconv;
pub mod error;
pub mod gradcheck;
pub mod imageio;
pub mod metrics;
pub mod model;
pub mod real;
pub mod rng;
pub mod synthetic;
pub mod tensor;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;
