//! Camera model, soft rasterizer and image helpers.

pub mod camera;
pub mod gradcheck;
pub mod image;
pub mod raster;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geom::Vec3;

pub use camera::{pose_to_view_matrix, sample_pose, sample_poses, wrap_degrees, CameraPose, CANONICAL_DISTANCE};
pub use gradcheck::{grad_check, GradCheckReport};
pub use image::{downsample, downsample_adjoint, luminance, RgbImage, SilhouetteImage};
pub use raster::{render_color, render_silhouette, ColorGrad, ColorRender, SilhouetteRender};

/// Grey used for flat-shaded renders of uncolored meshes.
pub const FLAT_GREY: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    /// Edge sharpness in squared NDC units.
    pub sigma: f64,
    /// Depth softmax temperature for color aggregation.
    pub gamma: f64,
    pub fov_deg: f64,
    pub background: Vec3,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            sigma: 1e-4,
            gamma: 1e-4,
            fov_deg: camera::DEFAULT_FOV_DEG,
            background: [0.5; 3],
        }
    }
}

impl RenderConfig {
    pub fn square(size: usize) -> Self {
        Self { width: size, height: size, ..Self::default() }
    }

    pub fn with_sigma(self, sigma: f64) -> Self {
        Self { sigma, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.width != self.height {
            return Err(invalid(format!("render size {}x{} must be square and non-empty", self.width, self.height)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(invalid(format!("sigma {} must be positive", self.sigma)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(invalid(format!("gamma {} must be positive", self.gamma)));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(invalid(format!("field of view {} outside (0, 180)", self.fov_deg)));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(invalid("background channel outside [0, 1]"));
        }
        Ok(())
    }
}
