//! Smoothness regularizers on vertex positions.
//!
//! Both losses depend only on connectivity plus positions, so the connectivity is captured once in
//! [`Regularizer`] and reused across optimization steps.

use super::Mesh;
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

/// A scalar loss value and its gradient with respect to every vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGrad {
    pub value: f64,
    pub grad: Vec<Vec3>,
}

/// Uniform-Laplacian smoothness: mean over vertices of `|v_i - mean(N(v_i))|^2`.
pub fn laplacian_loss(mesh: &Mesh) -> Result<LossAndGrad> {
    Regularizer::new(mesh)?.laplacian(&mesh.vertices)
}

/// Flatten loss: sum over interior edges of `(1 + cos theta_e)^2`, with `theta_e` the dihedral
/// angle between the two faces on the edge. Coplanar, consistently oriented faces contribute 0.
pub fn flatten_loss(mesh: &Mesh) -> Result<LossAndGrad> {
    Regularizer::new(mesh)?.flatten(&mesh.vertices)
}

/// Connectivity needed by the regularizers.
#[derive(Debug, Clone)]
pub struct Regularizer {
    faces: Vec<[u32; 3]>,
    neighbors: Vec<Vec<u32>>,
    /// Faces on each side of an interior edge.
    face_pairs: Vec<(usize, usize)>,
}

impl Regularizer {
    pub fn new(mesh: &Mesh) -> Result<Self> {
        let mut face_pairs = Vec::new();
        let mut edges: Vec<_> = mesh.edge_faces().into_iter().collect();
        edges.sort_unstable_by_key(|(e, _)| *e);
        for ((a, b), faces) in edges {
            match faces.len() {
                1 => {}
                2 => face_pairs.push((faces[0], faces[1])),
                n => {
                    return Err(Error::Topology(format!("non-manifold edge ({a}, {b}) shared by {n} faces")));
                }
            }
        }
        Ok(Self {
            faces: mesh.faces.clone(),
            neighbors: mesh.neighbors(),
            face_pairs,
        })
    }

    pub fn laplacian(&self, vertices: &[Vec3]) -> Result<LossAndGrad> {
        let n = vertices.len();
        if let Some(i) = self.neighbors.iter().position(Vec::is_empty) {
            return Err(Error::Topology(format!("vertex {i} has no neighbors")));
        }
        let residuals: Vec<Vec3> = (0..n)
            .map(|i| {
                let nb = &self.neighbors[i];
                let mut mean = [0.0; 3];
                for &j in nb {
                    geom::add_assign(&mut mean, vertices[j as usize]);
                }
                geom::sub(vertices[i], geom::scale(mean, 1.0 / nb.len() as f64))
            })
            .collect();
        let inv_n = 1.0 / n as f64;
        let value = residuals.iter().map(|&r| geom::dot(r, r)).sum::<f64>() * inv_n;
        let mut grad = vec![[0.0; 3]; n];
        for (i, &r) in residuals.iter().enumerate() {
            let g = geom::scale(r, 2.0 * inv_n);
            geom::add_assign(&mut grad[i], g);
            let share = -1.0 / self.neighbors[i].len() as f64;
            for &j in &self.neighbors[i] {
                geom::axpy(&mut grad[j as usize], share, g);
            }
        }
        Ok(LossAndGrad { value, grad })
    }

    pub fn flatten(&self, vertices: &[Vec3]) -> Result<LossAndGrad> {
        let mut grad = vec![[0.0; 3]; vertices.len()];
        let mut value = 0.0;
        for &(f1, f2) in &self.face_pairs {
            let (Some(n1), Some(n2)) = (self.unit_normal(vertices, f1), self.unit_normal(vertices, f2)) else {
                continue;
            };
            // cos(theta) = -n1.n2 for the interior angle theta between the faces.
            let c = geom::dot(n1.n, n2.n);
            let r = 1.0 - c;
            value += r * r;
            let coeff = -2.0 * r;
            self.backprop_normal(f1, &n1, geom::scale(n2.n, coeff), &mut grad);
            self.backprop_normal(f2, &n2, geom::scale(n1.n, coeff), &mut grad);
        }
        if !value.is_finite() {
            return Err(Error::NonFinite { component: "flatten" });
        }
        Ok(LossAndGrad { value, grad })
    }

    fn unit_normal(&self, vertices: &[Vec3], face: usize) -> Option<FaceNormal> {
        let [a, b, c] = self.faces[face].map(|i| vertices[i as usize]);
        let e1 = geom::sub(b, a);
        let e2 = geom::sub(c, a);
        let m = geom::cross(e1, e2);
        let len = geom::norm(m);
        (len > 1e-14).then(|| FaceNormal { n: geom::scale(m, 1.0 / len), len, e1, e2 })
    }

    /// Adds `dL/dvertices` given `dL/dn` for the unit normal of `face`.
    fn backprop_normal(&self, face: usize, fnrm: &FaceNormal, g_n: Vec3, grad: &mut [Vec3]) {
        // n = m / |m|  =>  dL/dm = (g - n (n . g)) / |m|
        let n = fnrm.n;
        let g_m = geom::scale(geom::sub(g_n, geom::scale(n, geom::dot(n, g_n))), 1.0 / fnrm.len);
        // m = e1 x e2
        let g_e1 = geom::cross(fnrm.e2, g_m);
        let g_e2 = geom::cross(g_m, fnrm.e1);
        let [a, b, c] = self.faces[face].map(|i| i as usize);
        geom::add_assign(&mut grad[b], g_e1);
        geom::add_assign(&mut grad[c], g_e2);
        geom::add_assign(&mut grad[a], geom::scale(geom::add(g_e1, g_e2), -1.0));
    }
}

struct FaceNormal {
    n: Vec3,
    len: f64,
    e1: Vec3,
    e2: Vec3,
}
