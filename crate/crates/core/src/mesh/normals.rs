use super::Mesh;
use crate::error::{invalid, Error, Result};
use crate::geom::{self, Vec3};

/// Area-weighted vertex normals.
///
/// The unnormalized face normal `(b - a) x (c - a)` has magnitude twice the face area, so summing
/// it over incident faces yields the area-weighted average direction.
pub fn vertex_normals(mesh: &Mesh) -> Result<Vec<Vec3>> {
    let mut acc = vec![[0.0; 3]; mesh.vertices.len()];
    for f in &mesh.faces {
        let [a, b, c] = f.map(|i| mesh.vertices[i as usize]);
        let n = geom::cross(geom::sub(b, a), geom::sub(c, a));
        for &i in f {
            geom::add_assign(&mut acc[i as usize], n);
        }
    }
    acc.into_iter()
        .enumerate()
        .map(|(i, n)| {
            let len = geom::norm(n);
            if len <= f64::MIN_POSITIVE || !len.is_finite() {
                Err(Error::DegenerateNormal { vertex: i })
            } else {
                Ok(geom::scale(n, 1.0 / len))
            }
        })
        .collect()
}

/// Moves vertex `i` by `d[i]` along its normal; faces and colors are kept.
pub fn displace_along_normals(mesh: &Mesh, d: &[f64]) -> Result<Mesh> {
    if d.len() != mesh.vertices.len() {
        return Err(invalid(format!(
            "{} displacements for {} vertices",
            d.len(),
            mesh.vertices.len()
        )));
    }
    let normals = vertex_normals(mesh)?;
    Ok(displace_with_normals(mesh, &normals, d))
}

pub(crate) fn displace_with_normals(mesh: &Mesh, normals: &[Vec3], d: &[f64]) -> Mesh {
    let mut out = mesh.clone();
    for ((v, n), &di) in out.vertices.iter_mut().zip(normals).zip(d) {
        geom::axpy(v, di, *n);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{make_icosphere, shapes};

    #[test]
    fn icosphere_normals_are_radial() {
        for s in 0..=1 {
            let m = make_icosphere(s).unwrap();
            for (v, n) in m.vertices.iter().zip(vertex_normals(&m).unwrap()) {
                let r = geom::scale(*v, 1.0 / geom::norm(*v));
                assert!(geom::norm(geom::sub(r, n)) < 1e-6);
            }
        }
        // Valence-6 vertices at finer levels lose the mirror symmetry, so only approximately radial.
        let m = make_icosphere(3).unwrap();
        for (v, n) in m.vertices.iter().zip(vertex_normals(&m).unwrap()) {
            assert!(geom::dot(*v, n) > 0.999);
        }
    }

    #[test]
    fn cube_corner_normals() {
        // Each corner collects equal area from its three faces: 1 (two triangles) on the
        // diagonal corners, 1/2 elsewhere. The average is therefore along (+-1, +-1, +-1).
        let cube = shapes::unit_cube();
        let normals = vertex_normals(&cube).unwrap();
        let inv = 1.0 / 3f64.sqrt();
        for (v, n) in cube.vertices.iter().zip(&normals) {
            let expected = v.map(|c| c.signum() * inv);
            assert!(geom::norm(geom::sub(expected, *n)) < 1e-12, "{v:?} -> {n:?}");
        }
    }

    #[test]
    fn flipped_winding_negates_normals() {
        let m = make_icosphere(2).unwrap();
        let a = vertex_normals(&m).unwrap();
        let b = vertex_normals(&m.flipped()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(geom::norm(geom::add(*x, *y)) < 1e-12);
        }
    }

    #[test]
    fn zero_normal_names_vertex() {
        // Two opposite copies of the same triangle cancel out.
        let m = Mesh {
            vertices: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            faces: vec![[0, 1, 2], [0, 2, 1]],
            colors: None,
        };
        assert!(matches!(vertex_normals(&m), Err(Error::DegenerateNormal { vertex: 0 })));
    }

    #[test]
    fn displacement_examples() {
        let m = make_icosphere(1).unwrap();
        let n = m.vertex_count();
        assert_eq!(displace_along_normals(&m, &vec![0.0; n]).unwrap(), m);
        let grown = displace_along_normals(&m, &vec![0.5; n]).unwrap();
        assert!(grown.vertices.iter().all(|&v| (geom::norm(v) - 1.5).abs() < 1e-6));
        let collapsed = displace_along_normals(&m, &vec![-1.0; n]).unwrap();
        assert!(collapsed.vertices.iter().all(|&v| geom::norm(v) < 1e-6));
        assert_eq!(grown.faces, m.faces);
        assert!(displace_along_normals(&m, &[0.0; 3]).is_err());
    }
}
