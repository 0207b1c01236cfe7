//! Wavefront OBJ with the common `v x y z r g b` vertex-color extension.

use std::fmt::Write as _;

use super::Mesh;
use crate::error::{Error, Result};

/// Serializes `mesh`; floats use the shortest round-trip representation, so output is exact and
/// byte-stable.
pub fn export_obj(mesh: &Mesh) -> Vec<u8> {
    let mut out = String::with_capacity(mesh.vertices.len() * 48 + mesh.faces.len() * 24);
    out.push_str("# sketchforge mesh\n");
    for (i, v) in mesh.vertices.iter().enumerate() {
        match &mesh.colors {
            Some(c) => {
                let c = c[i];
                let _ = writeln!(out, "v {} {} {} {} {} {}", v[0], v[1], v[2], c[0], c[1], c[2]);
            }
            None => {
                let _ = writeln!(out, "v {} {} {}", v[0], v[1], v[2]);
            }
        }
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out.into_bytes()
}

/// Parses OBJ text. Polygons are fan-triangulated; `vt`, `vn`, groups and materials are ignored.
pub fn import_obj(bytes: &[u8]) -> Result<Mesh> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse { line: 0, message: e.to_string() })?;
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut faces = Vec::new();
    let mut colored: Option<bool> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |message: String| Error::Parse { line, message };
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = content.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let nums = tokens
                    .map(|t| t.parse::<f64>().map_err(|e| err(format!("bad number {t:?}: {e}"))))
                    .collect::<Result<Vec<_>>>()?;
                let has_color = match nums.len() {
                    3 => false,
                    6 => true,
                    n => return Err(err(format!("vertex has {n} numbers, expected 3 or 6"))),
                };
                if *colored.get_or_insert(has_color) != has_color {
                    return Err(err("mix of colored and uncolored vertices".into()));
                }
                if nums.iter().any(|x| !x.is_finite()) {
                    return Err(err("non-finite vertex value".into()));
                }
                vertices.push([nums[0], nums[1], nums[2]]);
                if has_color {
                    colors.push([nums[3], nums[4], nums[5]]);
                }
            }
            Some("f") => {
                let idx = tokens
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|e| err(format!("bad face index {t:?}: {e}")))?;
                        let n = vertices.len() as i64;
                        let resolved = match i {
                            0 => return Err(err("face index 0 (OBJ indices are 1-based)".into())),
                            i if i > 0 => i - 1,
                            i => n + i,
                        };
                        if resolved < 0 || resolved >= n {
                            return Err(err(format!("face index {i} out of range")));
                        }
                        Ok(resolved as u32)
                    })
                    .collect::<Result<Vec<_>>>()?;
                if idx.len() < 3 {
                    return Err(err(format!("face with {} vertices", idx.len())));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            Some(_) | None => {}
        }
    }
    let colors = (colored == Some(true)).then_some(colors);
    Mesh::new(vertices, faces, colors).map_err(|e| Error::Parse { line: 0, message: e.to_string() })
}
