use super::Mesh;
use crate::error::{invalid, Result};
use crate::geom::Vec3;

pub const MIN_RESOLUTION: usize = 8;
pub const MAX_RESOLUTION: usize = 128;
pub const DEFAULT_RESOLUTION: usize = 32;

/// Axis-aligned cube `[min, min + edge]^3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: Vec3,
    pub edge: f64,
}

impl Bounds {
    /// Cube centered on the mesh bounding box, edge = 1.05 x the longest box side.
    pub fn covering(mesh: &Mesh) -> Self {
        let (lo, hi) = mesh.bbox();
        let center = [0, 1, 2].map(|k| 0.5 * (lo[k] + hi[k]));
        let side = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
        let edge = if side > 0.0 { side * 1.05 } else { 1.0 };
        Self { min: center.map(|c| c - 0.5 * edge), edge }
    }

    pub fn centered(half_edge: f64) -> Self {
        Self { min: [-half_edge; 3], edge: 2.0 * half_edge }
    }
}

/// `R x R x R` occupancy, indexed `x + R * (y + R * z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub resolution: usize,
    pub bounds: Bounds,
    pub occupancy: Vec<bool>,
}

impl VoxelGrid {
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        let r = self.resolution;
        self.occupancy[x + r * (y + r * z)]
    }

    pub fn count(&self) -> usize {
        self.occupancy.iter().filter(|&&b| b).count()
    }

    pub fn cell_center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        let h = self.bounds.edge / self.resolution as f64;
        let m = self.bounds.min;
        [m[0] + (x as f64 + 0.5) * h, m[1] + (y as f64 + 0.5) * h, m[2] + (z as f64 + 0.5) * h]
    }

    /// Packed bits, row-major in the same order as `occupancy`, LSB first within a byte.
    pub fn to_bits(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.occupancy.len().div_ceil(8)];
        for (i, &b) in self.occupancy.iter().enumerate() {
            if b {
                out[i / 8] |= 1 << (i % 8);
            }
        }
        out
    }

    pub fn from_bits(resolution: usize, bounds: Bounds, bits: &[u8]) -> Result<Self> {
        let n = resolution.pow(3);
        if bits.len() != n.div_ceil(8) {
            return Err(invalid(format!("{} bytes for {n} voxels", bits.len())));
        }
        let occupancy = (0..n).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
        Ok(Self { resolution, bounds, occupancy })
    }
}

/// Voxelizes a watertight mesh over [`Bounds::covering`].
pub fn voxelize(mesh: &Mesh, resolution: usize) -> Result<VoxelGrid> {
    voxelize_in(mesh, Bounds::covering(mesh), resolution)
}

/// A cell is occupied iff its center is inside the mesh, decided by the parity of crossings of a
/// ray cast along +x. Rows whose ray grazes an edge or vertex are re-cast from a slightly shifted
/// origin so the count never double-books a shared edge.
pub fn voxelize_in(mesh: &Mesh, bounds: Bounds, resolution: usize) -> Result<VoxelGrid> {
    if !(MIN_RESOLUTION..=MAX_RESOLUTION).contains(&resolution) {
        return Err(invalid(format!(
            "voxel resolution must be in [{MIN_RESOLUTION}, {MAX_RESOLUTION}], got {resolution}"
        )));
    }
    if !(bounds.edge > 0.0) {
        return Err(invalid("voxel bounds must have positive edge"));
    }
    mesh.check_watertight()?;

    let r = resolution;
    let h = bounds.edge / r as f64;
    let tris: Vec<[Vec3; 3]> = mesh.faces.iter().map(|f| f.map(|i| mesh.vertices[i as usize])).collect();
    let mut occupancy = vec![false; r * r * r];
    let mut hits = Vec::new();
    for z in 0..r {
        for y in 0..r {
            let yc = bounds.min[1] + (y as f64 + 0.5) * h;
            let zc = bounds.min[2] + (z as f64 + 0.5) * h;
            let mut shift = 0;
            loop {
                // Shifts stay far below a cell so the row keeps its meaning.
                let eps = 1e-7 * h * shift as f64;
                if ray_hits(&tris, yc + eps, zc + eps * 0.7548776662, &mut hits) {
                    break;
                }
                shift += 1;
                if shift > 16 {
                    break;
                }
            }
            hits.sort_unstable_by(f64::total_cmp);
            let mut k = 0;
            for x in 0..r {
                let xc = bounds.min[0] + (x as f64 + 0.5) * h;
                while k < hits.len() && hits[k] <= xc {
                    k += 1;
                }
                occupancy[x + r * (y + r * z)] = (hits.len() - k) % 2 == 1;
            }
        }
    }
    Ok(VoxelGrid { resolution, bounds, occupancy })
}

/// x-coordinates where the line `{y = py, z = pz}` crosses triangles; false on a grazing hit.
fn ray_hits(tris: &[[Vec3; 3]], py: f64, pz: f64, hits: &mut Vec<f64>) -> bool {
    hits.clear();
    for t in tris {
        let (ay, az) = (t[0][1] - py, t[0][2] - pz);
        let (by, bz) = (t[1][1] - py, t[1][2] - pz);
        let (cy, cz) = (t[2][1] - py, t[2][2] - pz);
        let area = (t[1][1] - t[0][1]) * (t[2][2] - t[0][2]) - (t[1][2] - t[0][2]) * (t[2][1] - t[0][1]);
        if area == 0.0 {
            // Triangle parallel to the ray; its neighbors account for the crossing.
            continue;
        }
        let w0 = by * cz - bz * cy;
        let w1 = cy * az - cz * ay;
        let w2 = ay * bz - az * by;
        let inside = (w0 > 0.0 && w1 > 0.0 && w2 > 0.0) || (w0 < 0.0 && w1 < 0.0 && w2 < 0.0);
        if inside {
            let s = w0 + w1 + w2;
            hits.push((w0 * t[0][0] + w1 * t[1][0] + w2 * t[2][0]) / s);
        } else {
            let on_boundary = (w0 == 0.0 || w1 == 0.0 || w2 == 0.0)
                && [w0, w1, w2].iter().all(|&w| w >= 0.0) | [w0, w1, w2].iter().all(|&w| w <= 0.0);
            if on_boundary {
                return false;
            }
        }
    }
    true
}

/// `|a and b| / |a or b|`, 1 when both grids are empty.
pub fn voxel_iou(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64> {
    if a.resolution != b.resolution {
        return Err(invalid(format!("voxel resolutions differ: {} vs {}", a.resolution, b.resolution)));
    }
    if a.bounds != b.bounds {
        return Err(invalid("voxel grids cover different bounds"));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.occupancy.iter().zip(&b.occupancy) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}
