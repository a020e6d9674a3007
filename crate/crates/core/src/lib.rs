//! Novel-view synthesis from a single RGB-D equirectangular panorama.
//!
//! The pipeline reprojects the source panorama into virtual views at
//! translated camera positions, filters rays that see through sparse
//! foreground points, and fits a coarse/fine radiance field with an extra
//! Laplacian-gradient head. Trained models render parallax-correct
//! panoramas from arbitrary positions.

pub mod augment;
pub mod error;
pub mod field;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod model;
pub mod raster;
pub mod render;
pub mod train;

pub use error::{Error, Result};
