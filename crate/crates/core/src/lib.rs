//! Texture and geometry refinement for low-quality textured meshes.
//!
//! The crate is organized bottom-up: [`field`] (2D arrays, filtering,
//! spectra), [`diffusion`] (SDEdit-style samplers over a pluggable denoiser),
//! [`mesh`], [`raster`], [`visibility`], [`integrate`], [`texture`] and the
//! [`pipeline`] that ties them together view by view.

pub mod diffusion;
pub mod error;
pub mod field;
pub mod integrate;
pub mod mesh;
pub mod pipeline;
pub mod raster;
pub mod texture;
pub mod visibility;

pub use error::{Error, Result};
pub use field::Field2D;

/// World-space vector type used throughout.
pub type Vec3 = nalgebra::Vector3<f64>;
