use serde::Serialize;

use super::{CameraPose, RenderConfig};
use crate::error::Result;
use crate::geom::Vec3;
use crate::mesh::Mesh;

/// Coordinates whose analytic derivative is below this magnitude are not compared.
const MIN_ANALYTIC: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub fraction_passing: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, min_fraction: f64) -> bool {
        self.fraction_passing >= min_fraction
    }
}

/// Compares the analytic vertex gradient of `loss_fn` with central differences.
///
/// `loss_fn` returns the loss value and its gradient for every vertex; the step is
/// `h = 1e-4 * bounding radius`. With nothing to compare, the pass fraction is 1.
pub fn grad_check<F>(loss_fn: F, mesh: &Mesh, pose: &CameraPose, cfg: &RenderConfig, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&Mesh, &CameraPose, &RenderConfig) -> Result<(f64, Vec<Vec3>)>,
{
    cfg.validate()?;
    mesh.validate()?;
    let (_, analytic) = loss_fn(mesh, pose, cfg)?;
    let h = 1e-4 * mesh.bounding_radius().max(1e-12);
    let mut probe = mesh.clone();
    let mut checked = 0usize;
    let mut passed = 0usize;
    let mut worst: f64 = 0.0;
    for i in 0..mesh.vertices.len() {
        for k in 0..3 {
            let a = analytic[i][k];
            if a.abs() <= MIN_ANALYTIC {
                continue;
            }
            let orig = probe.vertices[i][k];
            probe.vertices[i][k] = orig + h;
            let (plus, _) = loss_fn(&probe, pose, cfg)?;
            probe.vertices[i][k] = orig - h;
            let (minus, _) = loss_fn(&probe, pose, cfg)?;
            probe.vertices[i][k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
            worst = worst.max(rel);
            checked += 1;
            if rel <= tolerance {
                passed += 1;
            }
        }
    }
    let fraction_passing = if checked == 0 { 1.0 } else { passed as f64 / checked as f64 };
    Ok(GradCheckReport { max_rel_err: worst, fraction_passing, checked })
}
