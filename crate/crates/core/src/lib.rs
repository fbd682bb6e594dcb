//! Anchor-conditioned voxel scene generation: exclusive voxel grids,
//! condition tensors, latent codecs, diffusion sampling, autoregressive
//! scene assembly, asset retrieval and scene metrics.

pub mod anchors;
pub mod assembly;
pub mod config;
pub mod codec;
pub mod diffusion;
pub mod distance;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod retrieval;
pub mod scene;
pub mod vocab;
pub mod voxgrid;

pub use error::{Error, Result};
