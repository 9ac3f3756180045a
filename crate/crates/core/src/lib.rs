//! Sequential affordance reasoning over 3D Gaussian scenes.
//!
//! The crate covers the whole pipeline: procedural scene and instruction
//! generation ([`datagen`]), a tile-based Gaussian rasteriser that exposes
//! per-pixel compositing weights ([`raster`]), learning-free lifting of 2D
//! feature maps onto Gaussians ([`lift`]), a small reverse-mode autograd
//! engine ([`autograd`]), the encoder / planner / decoder network
//! ([`model`]), training ([`train`]) and the single-step and sequential
//! metric suite ([`metrics`]).

pub mod error;
pub mod autograd;
pub mod cli;
pub mod datagen;
pub mod geom;
pub mod lift;
pub mod metrics;
pub mod model;
pub mod raster;
pub mod scene;
pub mod train;
pub mod util;

pub use error::{Error, Result};
