//! Procedural shapes: seeded dataset categories and fixed exemplars for category words.
//!
//! Every shape is a union of closed primitives that touch but never overlap, so each one is
//! watertight and voxelizes by ray parity. Shapes are normalized to a centered bounding box whose
//! largest half-extent is 1. Furniture categories are deliberately asymmetric (drawer, lamp arm,
//! sofa chaise) so that their silhouettes determine the viewing azimuth.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geom::{self, Vec3};
use crate::mesh::shapes::{cuboid, cylinder, ellipsoid, frustum};
use crate::mesh::Mesh;

const SEGMENTS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Box,
    Ellipsoid,
    Cylinder,
    Table,
    Lamp,
    Sofa,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Box,
        Category::Ellipsoid,
        Category::Cylinder,
        Category::Table,
        Category::Lamp,
        Category::Sofa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Box => "box",
            Category::Ellipsoid => "ellipsoid",
            Category::Cylinder => "cylinder",
            Category::Table => "table",
            Category::Lamp => "lamp",
            Category::Sofa => "sofa",
        }
    }

    /// Shape with parameters drawn from the category's ranges.
    pub fn generate(self, rng: &mut impl Rng) -> Mesh {
        build(self, &mut |lo, hi| rng.random_range(lo..hi))
    }

    /// Shape with every parameter at the middle of its range.
    pub fn exemplar(self) -> Mesh {
        build(self, &mut |lo, hi| 0.5 * (lo + hi))
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| invalid(format!("unknown category {s:?}")))
    }
}

fn build(category: Category, draw: &mut dyn FnMut(f64, f64) -> f64) -> Mesh {
    let parts = match category {
        Category::Box => {
            let mut half = [1.0, draw(0.35, 0.8), draw(0.35, 0.8)];
            rotate_axes(&mut half, draw(0.0, 3.0));
            vec![cuboid([0.0; 3], half)]
        }
        Category::Ellipsoid => {
            let mut radii = [1.0, draw(0.45, 0.85), draw(0.3, 0.55)];
            rotate_axes(&mut radii, draw(0.0, 3.0));
            vec![ellipsoid([0.0; 3], radii, 3)]
        }
        Category::Cylinder => {
            // Either a slender rod or a flat disc; in between the template sphere is already close.
            if draw(0.0, 1.0) < 0.5 {
                vec![cylinder([0.0; 3], draw(0.25, 0.5), 1.0, SEGMENTS)]
            } else {
                vec![cylinder([0.0; 3], 1.0, draw(0.2, 0.45), SEGMENTS)]
            }
        }
        Category::Table => desk(draw),
        Category::Lamp => desk_lamp(draw),
        Category::Sofa => sectional(draw),
    };
    normalized(union(parts))
}

/// Cyclically permutes the axes `floor(k)` times.
fn rotate_axes(v: &mut Vec3, k: f64) {
    v.rotate_right((k.floor() as usize) % 3);
}

/// Box spanning `[lo, hi]`.
fn slab(lo: Vec3, hi: Vec3) -> Mesh {
    let c = geom::scale(geom::add(lo, hi), 0.5);
    let h = geom::scale(geom::sub(hi, lo), 0.5);
    cuboid(c, h)
}

/// Writing desk: top, four legs, a drawer pedestal under the right side and an upstand along
/// the back edge. The pedestal and upstand leave no mirror plane and show in any silhouette.
fn desk(draw: &mut dyn FnMut(f64, f64) -> f64) -> Vec<Mesh> {
    let w = 1.0;
    let d = draw(0.5, 0.7);
    let height = draw(0.6, 0.9);
    let top = draw(0.04, 0.07);
    let leg = draw(0.05, 0.08);
    let inset = 0.04;
    let mut parts = vec![slab([-w, height, -d], [w, height + top, d])];
    for (sx, sz) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
        let cx = sx * (w - inset - leg);
        let cz = sz * (d - inset - leg);
        parts.push(slab([cx - leg, 0.0, cz - leg], [cx + leg, height, cz + leg]));
    }
    let gap = 0.02;
    let x_inner = w - inset - 2.0 * leg - gap;
    let z_inner = d - inset - 2.0 * leg - gap;
    let pedestal = draw(0.35, 0.55);
    parts.push(slab([x_inner - pedestal, gap, -z_inner], [x_inner, height, z_inner]));
    let upstand = draw(0.15, 0.3);
    parts.push(slab([-w, height + top, -d], [w, height + top + upstand, -d + 0.05]));
    parts
}

/// Desk lamp: round base, off-center pole, an arm reaching sideways (so no mirror plane) and a
/// shade hanging from the arm tip.
fn desk_lamp(draw: &mut dyn FnMut(f64, f64) -> f64) -> Vec<Mesh> {
    let base_r = draw(0.3, 0.45);
    let base_h = 0.08;
    let pole_r = 0.04;
    let pole_x = -0.5 * base_r;
    let pole_top = draw(1.0, 1.4);
    let arm = draw(0.5, 0.8);
    let arm_t = 0.04;
    let shade_r = draw(0.22, 0.32);
    let shade_h = draw(0.25, 0.35);
    vec![
        cylinder([0.0, base_h / 2.0, 0.0], base_r, base_h / 2.0, SEGMENTS),
        cylinder([pole_x, (base_h + pole_top) / 2.0, 0.0], pole_r, (pole_top - base_h) / 2.0, SEGMENTS),
        slab([pole_x - arm_t, pole_top, -pole_r], [pole_x + arm_t, pole_top + 2.0 * arm_t, arm + 0.05]),
        frustum([pole_x, pole_top - shade_h / 2.0, arm], shade_r, 0.06, shade_h / 2.0, SEGMENTS),
    ]
}

/// L-shaped sectional: seat, back, left arm and a chaise on the right front.
fn sectional(draw: &mut dyn FnMut(f64, f64) -> f64) -> Vec<Mesh> {
    let w = 1.0;
    let d = draw(0.35, 0.45);
    let seat = draw(0.3, 0.4);
    let back_h = draw(0.75, 0.95);
    let back_t = 0.15;
    let arm_h = draw(0.5, 0.6);
    let chaise = draw(0.5, 0.7);
    let chaise_w = draw(0.5, 0.7);
    vec![
        slab([-w, 0.0, -d], [w, seat, d]),
        slab([-w - back_t, 0.0, -d - back_t], [w, back_h, -d]),
        slab([-w - back_t, 0.0, -d], [-w, arm_h, d]),
        slab([w - chaise_w, 0.0, d], [w, seat, d + chaise]),
    ]
}

fn union(parts: Vec<Mesh>) -> Mesh {
    let mut out = Mesh { vertices: vec![], faces: vec![], colors: None };
    for p in &parts {
        out.append(p);
    }
    out
}

/// Centers the bounding box at the origin and scales the largest half-extent to 1.
pub fn normalized(mut mesh: Mesh) -> Mesh {
    let (lo, hi) = mesh.bbox();
    let center = geom::scale(geom::add(lo, hi), 0.5);
    let half = (0..3).map(|k| (hi[k] - lo[k]) / 2.0).fold(0.0, f64::max);
    if half > 0.0 {
        for v in &mut mesh.vertices {
            *v = geom::scale(geom::sub(*v, center), 1.0 / half);
        }
    }
    mesh
}

fn lay_along_x(mut m: Mesh) -> Mesh {
    for v in &mut m.vertices {
        *v = [-v[1], v[0], v[2]];
    }
    m
}

fn lay_along_z(mut m: Mesh) -> Mesh {
    for v in &mut m.vertices {
        *v = [v[0], -v[2], v[1]];
    }
    m
}

/// Fixed exemplar shape for a category word, including words outside the dataset categories.
/// These only feed the toy embedding, so parts may overlap.
pub fn exemplar(word: &str) -> Option<Mesh> {
    if let Ok(c) = word.parse::<Category>() {
        return Some(c.exemplar());
    }
    let parts = match word {
        "sphere" => vec![ellipsoid([0.0; 3], [1.0; 3], 3)],
        "chair" => {
            let mut p = vec![slab([-0.5, 0.5, -0.5], [0.5, 0.6, 0.5]), slab([-0.5, 0.6, -0.5], [0.5, 1.4, -0.4])];
            for (x, z) in [(-0.45, -0.45), (0.45, -0.45), (0.45, 0.45), (-0.45, 0.45)] {
                p.push(slab([x - 0.05, 0.0, z - 0.05], [x + 0.05, 0.5, z + 0.05]));
            }
            p
        }
        "bench" => {
            let mut p = vec![slab([-1.0, 0.45, -0.3], [1.0, 0.55, 0.3])];
            for x in [-0.9, 0.9] {
                p.push(slab([x - 0.05, 0.0, -0.3], [x + 0.05, 0.45, 0.3]));
            }
            p
        }
        "cabinet" => vec![slab([-0.6, 0.0, -0.4], [0.6, 1.6, 0.4]), slab([-0.5, 0.7, 0.4], [0.5, 0.75, 0.45])],
        "car" => {
            let mut p = vec![slab([-1.0, 0.2, -0.45], [1.0, 0.55, 0.45]), slab([-0.5, 0.55, -0.4], [0.4, 0.85, 0.4])];
            for (x, z) in [(-0.6, -0.5), (0.6, -0.5), (0.6, 0.5), (-0.6, 0.5)] {
                p.push(lay_along_z(cylinder([0.0; 3], 0.2, 0.06, 16)).translated([x, 0.2, z]));
            }
            p
        }
        "airplane" => vec![
            lay_along_x(ellipsoid([0.0; 3], [0.15, 1.0, 0.15], 2)),
            slab([-0.2, -0.03, -1.0], [0.2, 0.03, 1.0]),
            slab([-1.0, 0.0, -0.35], [-0.8, 0.04, 0.35]),
            slab([-1.0, 0.0, -0.03], [-0.8, 0.4, 0.03]),
        ],
        "display" => vec![
            slab([-0.9, 0.5, -0.04], [0.9, 1.5, 0.04]),
            slab([-0.05, 0.1, -0.05], [0.05, 0.5, 0.05]),
            slab([-0.4, 0.0, -0.25], [0.4, 0.1, 0.25]),
        ],
        "loudspeaker" => vec![
            slab([-0.45, 0.0, -0.4], [0.45, 1.6, 0.4]),
            lay_along_z(cylinder([0.0; 3], 0.3, 0.03, 16)).translated([0.0, 0.5, 0.42]),
        ],
        "rifle" => vec![
            slab([-1.0, 0.0, -0.04], [0.5, 0.12, 0.04]),
            slab([0.5, -0.15, -0.05], [1.0, 0.12, 0.05]),
            slab([0.1, -0.25, -0.04], [0.2, 0.0, 0.04]),
        ],
        "telephone" => vec![slab([-0.35, 0.0, -0.7], [0.35, 0.08, 0.7]), slab([-0.3, 0.08, -0.6], [0.3, 0.1, 0.6])],
        "watercraft" | "vessel" | "boat" => vec![
            lay_along_x(ellipsoid([0.0; 3], [0.3, 1.0, 0.3], 2)).translated([0.0, 0.3, 0.0]),
            slab([-0.3, 0.5, -0.2], [0.3, 0.8, 0.2]),
        ],
        _ => return None,
    };
    Some(normalized(union(parts)))
}

/// Category words with an exemplar, dataset categories first.
pub const EXEMPLAR_WORDS: [&str; 17] = [
    "box",
    "ellipsoid",
    "cylinder",
    "table",
    "lamp",
    "sofa",
    "sphere",
    "airplane",
    "bench",
    "cabinet",
    "car",
    "chair",
    "display",
    "loudspeaker",
    "rifle",
    "telephone",
    "watercraft",
];
