//! Closed primitive meshes used by tests, the procedural dataset and toy-embedding exemplars.

use std::f64::consts::TAU;

use super::{make_icosphere, Mesh};
use crate::geom::Vec3;

/// Axis-aligned box. Quad diagonals run through the four corners whose sign product is +1, so
/// every corner sees the same triangle area on each of its three faces.
pub fn cuboid(center: Vec3, half: Vec3) -> Mesh {
    let sign = |bit: usize, i: usize| if i >> bit & 1 == 1 { 1.0 } else { -1.0 };
    let vertices: Vec<Vec3> = (0..8)
        .map(|i| {
            [
                center[0] + sign(0, i) * half[0],
                center[1] + sign(1, i) * half[1],
                center[2] + sign(2, i) * half[2],
            ]
        })
        .collect();
    let even = |i: usize| sign(0, i) * sign(1, i) * sign(2, i) > 0.0;
    let mut faces = Vec::with_capacity(12);
    for k in 0..3 {
        let (u, v) = ((k + 1) % 3, (k + 2) % 3);
        for s in [0usize, 1] {
            let corner = |bu: usize, bv: usize| (s << k) | (bu << u) | (bv << v);
            let mut quad = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
            if s == 0 {
                quad.reverse();
            }
            let [q0, q1, q2, q3] = quad.map(|i| i as u32);
            if even(quad[0]) {
                faces.push([q0, q1, q2]);
                faces.push([q0, q2, q3]);
            } else {
                faces.push([q1, q2, q3]);
                faces.push([q1, q3, q0]);
            }
        }
    }
    Mesh { vertices, faces, colors: None }
}

/// Unit-edge cube centered at the origin.
pub fn unit_cube() -> Mesh {
    cuboid([0.0; 3], [0.5; 3])
}

/// Closed cylinder along +y.
pub fn cylinder(center: Vec3, radius: f64, half_height: f64, segments: usize) -> Mesh {
    frustum(center, radius, radius, half_height, segments)
}

/// Closed frustum along +y with bottom radius `r0` and top radius `r1`; `r1 = 0` gives a cone.
pub fn frustum(center: Vec3, r0: f64, r1: f64, half_height: f64, segments: usize) -> Mesh {
    let n = segments.max(3);
    let mut vertices = Vec::with_capacity(2 * n + 2);
    let ring = |r: f64, y: f64, vertices: &mut Vec<Vec3>| {
        for i in 0..n {
            let (s, c) = (TAU * i as f64 / n as f64).sin_cos();
            vertices.push([center[0] + r * c, center[1] + y, center[2] - r * s]);
        }
    };
    ring(r0, -half_height, &mut vertices);
    let apex = r1 <= 0.0;
    if apex {
        vertices.push([center[0], center[1] + half_height, center[2]]);
    } else {
        ring(r1, half_height, &mut vertices);
    }
    let bottom_center = vertices.len() as u32;
    vertices.push([center[0], center[1] - half_height, center[2]]);
    let nn = n as u32;
    let mut faces = Vec::new();
    for i in 0..nn {
        let j = (i + 1) % nn;
        // Ring angle increases counter-clockwise seen from +y.
        faces.push([bottom_center, j, i]);
        if apex {
            faces.push([i, j, nn]);
        } else {
            faces.push([i, j, nn + j]);
            faces.push([i, nn + j, nn + i]);
        }
    }
    if !apex {
        let top_center = vertices.len() as u32;
        vertices.push([center[0], center[1] + half_height, center[2]]);
        for i in 0..nn {
            let j = (i + 1) % nn;
            faces.push([top_center, nn + i, nn + j]);
        }
    }
    Mesh { vertices, faces, colors: None }
}

/// Axis-aligned ellipsoid from a subdivided icosphere.
pub fn ellipsoid(center: Vec3, radii: Vec3, subdivisions: u32) -> Mesh {
    let mut m = make_icosphere(subdivisions.min(super::icosphere::MAX_SUBDIVISIONS)).expect("subdivision in range");
    for v in &mut m.vertices {
        for k in 0..3 {
            v[k] = center[k] + v[k] * radii[k];
        }
    }
    m
}

/// Two coplanar triangles in z = 0 sharing the edge (1, 2).
pub fn quad_patch() -> Mesh {
    Mesh {
        vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]],
        faces: vec![[0, 1, 2], [1, 3, 2]],
        colors: None,
    }
}
