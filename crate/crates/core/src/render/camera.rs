use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geom::{self, Vec3};

/// Field of view of the default camera, degrees.
pub const DEFAULT_FOV_DEG: f64 = 30.0;

/// Camera distance at which the unit sphere's outline spans 70% of the frame under the default
/// field of view: `sqrt(1 + (cot(fov/2) / 0.7)^2)`.
pub const CANONICAL_DISTANCE: f64 = 5.424_472_744_109_116;

/// Elevation range of the pose distribution, degrees.
pub const ELEVATION_RANGE: (f64, f64) = (-20.0, 40.0);

/// Camera orbiting the origin: azimuth about +y from +z toward +x, elevation toward +y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
}

impl CameraPose {
    /// Validates ranges; azimuth is wrapped into `[0, 360)`.
    pub fn new(azimuth: f64, elevation: f64, distance: f64) -> Result<Self> {
        if !azimuth.is_finite() || !elevation.is_finite() {
            return Err(invalid("non-finite camera angle"));
        }
        if !(-90.0..=90.0).contains(&elevation) {
            return Err(invalid(format!("elevation {elevation} outside [-90, 90]")));
        }
        if !(distance > 0.0 && distance.is_finite()) {
            return Err(invalid(format!("camera distance {distance} must be positive")));
        }
        Ok(Self { azimuth: wrap_degrees(azimuth), elevation, distance })
    }

    /// Canonical view: azimuth 0, elevation 0, canonical distance.
    pub fn canonical() -> Self {
        Self { azimuth: 0.0, elevation: 0.0, distance: CANONICAL_DISTANCE }
    }

    pub fn at(azimuth: f64, elevation: f64) -> Result<Self> {
        Self::new(azimuth, elevation, CANONICAL_DISTANCE)
    }

    pub fn position(&self) -> Vec3 {
        let (sa, ca) = self.azimuth.to_radians().sin_cos();
        let (se, ce) = self.elevation.to_radians().sin_cos();
        [self.distance * ce * sa, self.distance * se, self.distance * ce * ca]
    }

    /// Camera axes `(right, up, back)` in world coordinates.
    ///
    /// `right` stays horizontal for every elevation, so the frame is well defined at the poles;
    /// away from the poles it equals the usual look-at frame with world up `+y`.
    pub fn axes(&self) -> [Vec3; 3] {
        let (sa, ca) = self.azimuth.to_radians().sin_cos();
        let (se, ce) = self.elevation.to_radians().sin_cos();
        let right = [ca, 0.0, -sa];
        let back = [ce * sa, se, ce * ca];
        let up = geom::cross(back, right);
        [right, up, back]
    }
}

/// Wraps an angle into `[0, 360)`.
pub fn wrap_degrees(a: f64) -> f64 {
    let w = a.rem_euclid(360.0);
    if w >= 360.0 { 0.0 } else { w }
}

/// World-to-camera transform; the camera looks down its local `-z`.
pub fn pose_to_view_matrix(pose: &CameraPose) -> [[f64; 4]; 4] {
    let [r, u, b] = pose.axes();
    let c = pose.position();
    [
        [r[0], r[1], r[2], -geom::dot(r, c)],
        [u[0], u[1], u[2], -geom::dot(u, c)],
        [b[0], b[1], b[2], -geom::dot(b, c)],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

/// `n` poses with azimuth uniform in `[0, 360)`, elevation uniform in [`ELEVATION_RANGE`], and the
/// canonical distance. Deterministic in `seed`.
pub fn sample_poses(n: usize, seed: u64) -> Vec<CameraPose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample_pose(&mut rng)).collect()
}

pub fn sample_pose(rng: &mut impl Rng) -> CameraPose {
    let azimuth = rng.random_range(0.0..360.0);
    let elevation = rng.random_range(ELEVATION_RANGE.0..ELEVATION_RANGE.1);
    CameraPose { azimuth, elevation, distance: CANONICAL_DISTANCE }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn apply(m: &[[f64; 4]; 4], p: Vec3) -> Vec3 {
        [0, 1, 2].map(|r| m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2] + m[r][3])
    }

    #[test]
    fn canonical_distance_matches_formula() {
        let f = 1.0 / (DEFAULT_FOV_DEG.to_radians() / 2.0).tan();
        let d = (1.0 + (f / 0.7f64).powi(2)).sqrt();
        assert!((d - CANONICAL_DISTANCE).abs() < 1e-6);
    }

    #[test]
    fn view_matrix_examples() {
        let p = CameraPose::new(0.0, 0.0, 2.0).unwrap();
        assert!(geom::norm(geom::sub(p.position(), [0.0, 0.0, 2.0])) < 1e-12);
        let m = pose_to_view_matrix(&p);
        // Origin lies straight ahead at depth 2.
        assert!(geom::norm(geom::sub(apply(&m, [0.0; 3]), [0.0, 0.0, -2.0])) < 1e-12);

        let p = CameraPose::new(90.0, 0.0, 2.0).unwrap();
        assert!(geom::norm(geom::sub(p.position(), [2.0, 0.0, 0.0])) < 1e-12);
        assert!(geom::norm(geom::sub(apply(&pose_to_view_matrix(&p), [0.0; 3]), [0.0, 0.0, -2.0])) < 1e-12);

        let p = CameraPose::new(37.0, 90.0, 2.0).unwrap();
        assert!(geom::norm(geom::sub(p.position(), [0.0, 2.0, 0.0])) < 1e-12);
        let m = pose_to_view_matrix(&p);
        assert!(m.iter().flatten().all(|v| v.is_finite()));
        assert!(geom::norm(geom::sub(apply(&m, [0.0; 3]), [0.0, 0.0, -2.0])) < 1e-12);
    }

    #[test]
    fn axes_are_orthonormal() {
        for &(a, e) in &[(0.0, 0.0), (123.0, -45.0), (300.0, 89.9), (10.0, -90.0)] {
            let [r, u, b] = CameraPose::at(a, e).unwrap().axes();
            for (x, y) in [(r, u), (u, b), (r, b)] {
                assert!(geom::dot(x, y).abs() < 1e-12);
            }
            for x in [r, u, b] {
                assert!((geom::norm(x) - 1.0).abs() < 1e-12);
            }
            assert!(geom::norm(geom::sub(geom::cross(r, u), b)) < 1e-12);
        }
        let [_, u, _] = CameraPose::canonical().axes();
        assert_eq!(u, [0.0, 1.0, 0.0]);
    }

    #[test]
    fn pose_validation() {
        assert_eq!(CameraPose::new(370.0, 0.0, 1.0).unwrap().azimuth, 10.0);
        assert_eq!(CameraPose::new(-90.0, 0.0, 1.0).unwrap().azimuth, 270.0);
        assert!(CameraPose::new(0.0, 91.0, 1.0).is_err());
        assert!(CameraPose::new(0.0, 0.0, 0.0).is_err());
        assert!(CameraPose::new(f64::NAN, 0.0, 1.0).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_poses(3, 42);
        assert_eq!(a, sample_poses(3, 42));
        assert_ne!(a, sample_poses(3, 43));
        assert_eq!(a.len(), 3);
        for p in a {
            assert_eq!(p.distance, CANONICAL_DISTANCE);
            assert!((0.0..360.0).contains(&p.azimuth));
            assert!((ELEVATION_RANGE.0..ELEVATION_RANGE.1).contains(&p.elevation));
        }
    }

    #[test]
    fn azimuth_histogram_is_uniform() {
        // Chi-squared test over 36 bins; critical value for 35 dof at p = 0.01 is 57.34.
        let poses = sample_poses(10_000, 7);
        let mut bins = [0usize; 36];
        for p in &poses {
            bins[(p.azimuth / 10.0) as usize] += 1;
        }
        let expected = 10_000.0 / 36.0;
        let chi2: f64 = bins.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 57.34, "chi2 = {chi2}");
    }
}
