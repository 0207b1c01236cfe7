//! Sketch-to-mesh engine.

pub mod dataset;
pub mod embedding;
pub mod error;
pub mod fit;
pub mod geom;
pub mod losses;
pub mod mesh;
pub mod model;
pub mod optim;
pub mod procedural;
pub mod render;
pub mod sketch;
pub mod stylize;
pub mod train;

pub use error::{Error, Result};
pub use mesh::Mesh;
