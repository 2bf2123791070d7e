//! Deformable 3D convolution (D3D) with analytic gradients, and a compact
//! video super-resolution network built on it.
//!
//! Layout conventions: feature maps are `[C, T, H, W]`, per-frame maps
//! `[C, H, W]`, single-channel frames `[1, H, W]`. Pixel values live in
//! `[0, 1]`.

pub mod autograd;
pub mod conv;
pub mod data;
pub mod deform;
pub mod error;
mod gemm;
pub mod metrics;
pub mod network;
pub mod parallel;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
