use std::collections::HashMap;

use super::Mesh;
use crate::error::{invalid, Result};
use crate::geom::{self, Vec3};

pub const MAX_SUBDIVISIONS: u32 = 5;

/// Unit icosphere together with the edge parents of every vertex added by subdivision.
///
/// Subdivision keeps earlier vertices at their indices, so level `k` vertices are a prefix of
/// level `k + 1` vertices. `parents[k][j]` are the endpoints of the edge whose midpoint produced
/// vertex `V_k + j` of level `k + 1`.
#[derive(Debug, Clone)]
pub struct Icosphere {
    pub mesh: Mesh,
    pub level_sizes: Vec<usize>,
    pub parents: Vec<Vec<[u32; 2]>>,
}

/// Unit-radius icosphere centered at the origin; `10 * 4^s + 2` vertices.
pub fn make_icosphere(subdivisions: u32) -> Result<Mesh> {
    Ok(Icosphere::new(subdivisions)?.mesh)
}

/// Parent edges for each subdivision step up to `subdivisions`.
pub fn subdivision_parents(subdivisions: u32) -> Result<Vec<Vec<[u32; 2]>>> {
    Ok(Icosphere::new(subdivisions)?.parents)
}

impl Icosphere {
    pub fn new(subdivisions: u32) -> Result<Self> {
        if subdivisions > MAX_SUBDIVISIONS {
            return Err(invalid(format!(
                "icosphere subdivisions must be in [0, {MAX_SUBDIVISIONS}], got {subdivisions}"
            )));
        }
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let raw: [Vec3; 12] = [
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ];
        let mut vertices: Vec<Vec3> = raw.iter().map(|&v| geom::scale(v, 1.0 / geom::norm(v))).collect();
        let mut faces: Vec<[u32; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        let mut level_sizes = vec![vertices.len()];
        let mut parents = Vec::new();
        for _ in 0..subdivisions {
            let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
            let mut level_parents = Vec::new();
            let mut next = Vec::with_capacity(faces.len() * 4);
            let mut mid = |a: u32, b: u32, vertices: &mut Vec<Vec3>| -> u32 {
                let key = (a.min(b), a.max(b));
                *midpoint.entry(key).or_insert_with(|| {
                    let m = geom::scale(geom::add(vertices[a as usize], vertices[b as usize]), 0.5);
                    vertices.push(geom::scale(m, 1.0 / geom::norm(m)));
                    level_parents.push([key.0, key.1]);
                    (vertices.len() - 1) as u32
                })
            };
            for &[a, b, c] in &faces {
                let ab = mid(a, b, &mut vertices);
                let bc = mid(b, c, &mut vertices);
                let ca = mid(c, a, &mut vertices);
                next.push([a, ab, ca]);
                next.push([b, bc, ab]);
                next.push([c, ca, bc]);
                next.push([ab, bc, ca]);
            }
            faces = next;
            level_sizes.push(vertices.len());
            parents.push(level_parents);
        }
        Ok(Self {
            mesh: Mesh { vertices, faces, colors: None },
            level_sizes,
            parents,
        })
    }

    /// Interpolates per-vertex values from level `k` to level `k + 1` (edge midpoints average).
    pub fn upsample(&self, level: usize, values: &[Vec3]) -> Vec<Vec3> {
        let mut out = values.to_vec();
        out.extend(self.parents[level].iter().map(|&[a, b]| {
            geom::scale(geom::add(values[a as usize], values[b as usize]), 0.5)
        }));
        out
    }

    /// Adjoint of [`Icosphere::upsample`]: folds fine-level gradients back onto level `k`.
    pub fn upsample_adjoint(&self, level: usize, grad_fine: &[Vec3]) -> Vec<Vec3> {
        let coarse = self.level_sizes[level];
        let mut out = grad_fine[..coarse].to_vec();
        for (j, &[a, b]) in self.parents[level].iter().enumerate() {
            let g = geom::scale(grad_fine[coarse + j], 0.5);
            geom::add_assign(&mut out[a as usize], g);
            geom::add_assign(&mut out[b as usize], g);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signed_volume(m: &Mesh) -> f64 {
        m.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| m.vertices[i as usize]);
                geom::dot(a, geom::cross(b, c)) / 6.0
            })
            .sum()
    }

    #[test]
    fn counts_follow_subdivision_formula() {
        let m0 = make_icosphere(0).unwrap();
        assert_eq!((m0.vertex_count(), m0.face_count()), (12, 20));
        let m1 = make_icosphere(1).unwrap();
        assert_eq!((m1.vertex_count(), m1.face_count()), (42, 80));
        for s in 0..=MAX_SUBDIVISIONS {
            let m = make_icosphere(s).unwrap();
            assert_eq!(m.vertex_count(), 10 * 4usize.pow(s) + 2);
            assert_eq!(m.face_count(), 20 * 4usize.pow(s));
            m.check_sphere_topology().unwrap();
            assert!(m.vertices.iter().all(|&v| (geom::norm(v) - 1.0).abs() < 1e-12));
            assert!(signed_volume(&m) > 0.0, "faces must wind outward");
        }
    }

    #[test]
    fn rejects_too_many_subdivisions() {
        assert!(make_icosphere(6).is_err());
    }

    #[test]
    fn levels_are_prefixes() {
        let ico = Icosphere::new(3).unwrap();
        let m2 = make_icosphere(2).unwrap();
        assert_eq!(ico.level_sizes, vec![12, 42, 162, 642]);
        assert_eq!(&ico.mesh.vertices[..162], &m2.vertices[..]);
    }

    #[test]
    fn upsample_adjoint_is_transpose() {
        let ico = Icosphere::new(2).unwrap();
        let coarse: Vec<Vec3> = (0..42).map(|i| [i as f64, (i * i) as f64 * 0.1, -(i as f64)]).collect();
        let fine_g: Vec<Vec3> = (0..162).map(|i| [(i % 7) as f64, 1.0, (i % 3) as f64]).collect();
        let up = ico.upsample(1, &coarse);
        let lhs: f64 = up.iter().zip(&fine_g).map(|(a, b)| geom::dot(*a, *b)).sum();
        let back = ico.upsample_adjoint(1, &fine_g);
        let rhs: f64 = coarse.iter().zip(&back).map(|(a, b)| geom::dot(*a, *b)).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }
}
