//! Adapting a frozen toy text-to-image latent diffusion model into a
//! text-to-video model with bottleneck adapters and latent-shift attention.

pub mod adapters;
pub mod checkpoint;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod evalbench;
pub mod lsa;
pub mod nn;
pub mod numerics;
pub mod params;
pub mod pipelines;
pub mod toyworld;

pub use error::{Error, Result};
pub use numerics::{Scalar, Tensor};
