//! Triangle meshes: representation, templates, regularizers, voxelization and OBJ I/O.

mod icosphere;
mod normals;
pub mod obj;
mod regularize;
pub mod shapes;
mod voxel;

use std::collections::HashMap;

use crate::error::{invalid, Error, Result};
use crate::geom::{self, Vec3};

pub use icosphere::{make_icosphere, subdivision_parents, Icosphere};
pub use normals::{displace_along_normals, vertex_normals};
pub use regularize::{flatten_loss, laplacian_loss, LossAndGrad, Regularizer};
pub use voxel::{voxel_iou, voxelize, voxelize_in, Bounds, VoxelGrid, DEFAULT_RESOLUTION};

/// An indexed triangle mesh with optional per-vertex RGB colors.
///
/// Faces wind counter-clockwise when seen from outside.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub colors: Option<Vec<Vec3>>,
}

impl Mesh {
    /// Builds a mesh and checks index and color invariants.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>, colors: Option<Vec<Vec3>>) -> Result<Self> {
        let mesh = Self { vertices, faces, colors };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&i| i as usize >= n) {
                return Err(Error::Topology(format!("face {fi} references a vertex out of range")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Topology(format!("face {fi} is degenerate")));
            }
        }
        if let Some(colors) = &self.colors {
            if colors.len() != n {
                return Err(invalid(format!(
                    "{} colors for {} vertices",
                    colors.len(),
                    n
                )));
            }
            if colors.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(invalid("vertex color channel outside [0, 1]"));
            }
        }
        if self.vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(invalid("non-finite vertex coordinate"));
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Maps each undirected edge `(min, max)` to the faces that use it, in face order.
    pub fn edge_faces(&self) -> HashMap<(u32, u32), Vec<usize>> {
        let mut map: HashMap<(u32, u32), Vec<usize>> = HashMap::with_capacity(self.faces.len() * 3 / 2);
        for (fi, f) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                map.entry((a.min(b), a.max(b))).or_default().push(fi);
            }
        }
        map
    }

    /// Sorted undirected edge list.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut edges: Vec<_> = self.edge_faces().into_keys().collect();
        edges.sort_unstable();
        edges
    }

    /// Per-vertex sorted neighbor lists.
    pub fn neighbors(&self) -> Vec<Vec<u32>> {
        let mut nbrs = vec![Vec::new(); self.vertices.len()];
        for (a, b) in self.edges() {
            nbrs[a as usize].push(b);
            nbrs[b as usize].push(a);
        }
        for n in &mut nbrs {
            n.sort_unstable();
        }
        nbrs
    }

    /// Every edge shared by exactly two faces, with opposite directions in each.
    pub fn check_watertight(&self) -> Result<()> {
        let mut directed: HashMap<(u32, u32), usize> = HashMap::with_capacity(self.faces.len() * 3);
        for f in &self.faces {
            for k in 0..3 {
                *directed.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
            }
        }
        for (&(a, b), &count) in &directed {
            if count != 1 {
                return Err(Error::Topology(format!("edge ({a}, {b}) used {count} times in one direction")));
            }
            if !directed.contains_key(&(b, a)) {
                return Err(Error::Topology(format!("boundary edge ({a}, {b})")));
            }
        }
        Ok(())
    }

    /// `V - E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_faces().len() as i64 + self.faces.len() as i64
    }

    /// Closed, consistently oriented, genus 0 and without unreferenced vertices.
    pub fn check_sphere_topology(&self) -> Result<()> {
        self.check_watertight()?;
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &i in f {
                used[i as usize] = true;
            }
        }
        if let Some(v) = used.iter().position(|u| !u) {
            return Err(Error::Topology(format!("vertex {v} is isolated")));
        }
        match self.euler_characteristic() {
            2 => Ok(()),
            chi => Err(Error::Topology(format!("Euler characteristic {chi}, expected 2"))),
        }
    }

    /// Axis-aligned bounding box `(min, max)`; zero box for an empty mesh.
    pub fn bbox(&self) -> (Vec3, Vec3) {
        if self.vertices.is_empty() {
            return ([0.0; 3], [0.0; 3]);
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    /// Largest distance of a vertex from the origin.
    pub fn bounding_radius(&self) -> f64 {
        self.vertices.iter().map(|&v| geom::norm(v)).fold(0.0, f64::max)
    }

    pub fn translated(&self, t: Vec3) -> Mesh {
        let mut m = self.clone();
        for v in &mut m.vertices {
            *v = geom::add(*v, t);
        }
        m
    }

    /// Same mesh with every vertex colored `rgb`.
    pub fn with_uniform_color(&self, rgb: Vec3) -> Mesh {
        let mut m = self.clone();
        m.colors = Some(vec![rgb; self.vertices.len()]);
        m
    }

    /// Reverses every face winding.
    pub fn flipped(&self) -> Mesh {
        let mut m = self.clone();
        for f in &mut m.faces {
            f.swap(1, 2);
        }
        m
    }

    /// Appends `other` as a separate component.
    pub fn append(&mut self, other: &Mesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.faces.extend(other.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
        match (&mut self.colors, &other.colors) {
            (Some(a), Some(b)) => a.extend_from_slice(b),
            (None, None) => {}
            _ => self.colors = None,
        }
    }
}
