//! Soft rasterization with analytic gradients.
//!
//! Every front-facing triangle `j` covers pixel `p` with probability
//! `D_j(p) = sigmoid(delta_j * d^2(p, j) / sigma)`, where `d^2` is the squared screen distance from
//! the pixel center to the triangle boundary and `delta_j` is +1 inside, -1 outside. Coverage is
//! aggregated as `S(p) = 1 - prod_j (1 - D_j(p))`. Screen coordinates are normalized device
//! coordinates in `[-1, 1]`, y up.
//!
//! Color renders blend barycentrically interpolated vertex colors with softmax weights
//! `exp(q_j / gamma) * D_j`, where `q_j` is the normalized inverse depth of the triangle at the
//! pixel, and composite the blend over the background with the coverage `S`.

use super::camera::CameraPose;
use super::image::{RgbImage, SilhouetteImage};
use super::RenderConfig;
use crate::error::{invalid, Result};
use crate::geom::{self, sigmoid, softplus, Vec2, Vec3};
use crate::mesh::Mesh;

/// Beyond `d^2 / sigma` of this value a triangle's outside coverage is below 1e-17 and skipped.
const CUTOFF: f64 = 40.0;
/// Triangles with a vertex closer than this to the camera plane are dropped.
const CLIP_NEAR: f64 = 0.05;
/// Depth range used to normalize depth for color aggregation.
const DEPTH_NEAR: f64 = 1.0;
const DEPTH_FAR: f64 = 100.0;
/// Smallest screen-space doubled area treated as a visible triangle.
const MIN_AREA: f64 = 1e-14;
/// Width of the soft barycentric clamp.
const BARY_SOFTNESS: f64 = 0.02;

/// Projected geometry shared by forward and backward passes.
#[derive(Debug, Clone)]
struct Projection {
    width: usize,
    height: usize,
    sigma: f64,
    screen: Vec<Vec2>,
    /// `d screen / d vertex`, two rows of length 3.
    jac: Vec<[Vec3; 2]>,
    /// Normalized inverse depth: larger is closer.
    q: Vec<f64>,
    /// `d q / d vertex`.
    q_grad: Vec<Vec3>,
    /// Visible faces with their pixel bounding boxes.
    faces: Vec<VisibleFace>,
}

#[derive(Debug, Clone)]
struct VisibleFace {
    idx: [usize; 3],
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

/// What a pixel center sees of one triangle.
#[derive(Debug, Clone, Copy)]
struct Fragment {
    pixel: usize,
    inside: bool,
    d2: f64,
    /// Closest boundary edge `(k, k + 1)` of the face, its parameter and `p - closest`.
    edge: usize,
    t: f64,
    w: Vec2,
    p: Vec2,
}

impl Fragment {
    /// Logit `x = delta * d^2 / sigma`.
    fn logit(&self, sigma: f64) -> f64 {
        if self.inside { self.d2 / sigma } else { -self.d2 / sigma }
    }
}

impl Projection {
    fn new(mesh: &Mesh, pose: &CameraPose, cfg: &RenderConfig) -> Result<Self> {
        cfg.validate()?;
        mesh.validate()?;
        let [right, up, back] = pose.axes();
        let eye = pose.position();
        let focal = 1.0 / (cfg.fov_deg.to_radians() / 2.0).tan();
        let n = mesh.vertices.len();
        let mut screen = Vec::with_capacity(n);
        let mut jac = Vec::with_capacity(n);
        let mut q = Vec::with_capacity(n);
        let mut q_grad = Vec::with_capacity(n);
        let mut depth = Vec::with_capacity(n);
        for &v in &mesh.vertices {
            let rel = geom::sub(v, eye);
            let x = geom::dot(right, rel);
            let y = geom::dot(up, rel);
            let z = -geom::dot(back, rel);
            depth.push(z);
            let inv = 1.0 / z;
            screen.push([focal * x * inv, focal * y * inv]);
            // d(x/z)/dv = (right + (x/z) back) / z since dz/dv = -back.
            let jx = geom::scale(geom::add(right, geom::scale(back, x * inv)), focal * inv);
            let jy = geom::scale(geom::add(up, geom::scale(back, y * inv)), focal * inv);
            jac.push([jx, jy]);
            q.push((DEPTH_FAR - z) / (DEPTH_FAR - DEPTH_NEAR));
            q_grad.push(geom::scale(back, 1.0 / (DEPTH_FAR - DEPTH_NEAR)));
        }

        let (w, h) = (cfg.width, cfg.height);
        let margin = (cfg.sigma * CUTOFF).sqrt();
        let mut faces = Vec::with_capacity(mesh.faces.len());
        for f in &mesh.faces {
            let idx = f.map(|i| i as usize);
            if idx.iter().any(|&i| depth[i] < CLIP_NEAR) {
                continue;
            }
            let [a, b, c] = idx.map(|i| screen[i]);
            if geom::cross2(geom::sub2(b, a), geom::sub2(c, a)) <= MIN_AREA {
                continue;
            }
            let xmin = a[0].min(b[0]).min(c[0]) - margin;
            let xmax = a[0].max(b[0]).max(c[0]) + margin;
            let ymin = a[1].min(b[1]).min(c[1]) - margin;
            let ymax = a[1].max(b[1]).max(c[1]) + margin;
            // Pixel centers: x_i = -1 + (2i + 1) / W, y_j = 1 - (2j + 1) / H.
            let x0 = ((xmin + 1.0) * w as f64 / 2.0 - 0.5).ceil().max(0.0);
            let x1 = ((xmax + 1.0) * w as f64 / 2.0 - 0.5).floor().min(w as f64 - 1.0);
            let y0 = ((1.0 - ymax) * h as f64 / 2.0 - 0.5).ceil().max(0.0);
            let y1 = ((1.0 - ymin) * h as f64 / 2.0 - 0.5).floor().min(h as f64 - 1.0);
            if x0 > x1 || y0 > y1 {
                continue;
            }
            faces.push(VisibleFace { idx, x0: x0 as usize, x1: x1 as usize, y0: y0 as usize, y1: y1 as usize });
        }
        Ok(Self { width: w, height: h, sigma: cfg.sigma, screen, jac, q, q_grad, faces })
    }

    /// Calls `f` for every pixel within the influence range of `face`.
    fn for_each_fragment(&self, face: &VisibleFace, mut f: impl FnMut(&Fragment)) {
        let [a, b, c] = face.idx.map(|i| self.screen[i]);
        let verts = [a, b, c];
        let limit = self.sigma * CUTOFF;
        let (w, h) = (self.width as f64, self.height as f64);
        for py in face.y0..=face.y1 {
            let y = 1.0 - (2 * py + 1) as f64 / h;
            for px in face.x0..=face.x1 {
                let x = -1.0 + (2 * px + 1) as f64 / w;
                let p = [x, y];
                let inside = (0..3).all(|k| {
                    geom::cross2(geom::sub2(verts[(k + 1) % 3], verts[k]), geom::sub2(p, verts[k])) >= 0.0
                });
                let mut best = (f64::INFINITY, 0, 0.0, [0.0; 2]);
                for k in 0..3 {
                    let (d2, t, wv) = segment_distance2(p, verts[k], verts[(k + 1) % 3]);
                    if d2 < best.0 {
                        best = (d2, k, t, wv);
                    }
                }
                if !inside && best.0 > limit {
                    continue;
                }
                f(&Fragment {
                    pixel: py * self.width + px,
                    inside,
                    d2: best.0,
                    edge: best.1,
                    t: best.2,
                    w: best.3,
                    p,
                });
            }
        }
    }

    /// Screen-space gradient of `d^2` for the fragment's face vertices, scaled by `g`.
    fn d2_grad(frag: &Fragment, g: f64, out: &mut [Vec2; 3]) {
        // d^2 = |p - (u + t (v - u))|^2 with t at its optimum: d/du = -2w(1 - t), d/dv = -2wt.
        let k = frag.edge;
        let su = -2.0 * g * (1.0 - frag.t);
        let sv = -2.0 * g * frag.t;
        out[k][0] += su * frag.w[0];
        out[k][1] += su * frag.w[1];
        let k1 = (k + 1) % 3;
        out[k1][0] += sv * frag.w[0];
        out[k1][1] += sv * frag.w[1];
    }

    fn scatter_screen_grad(&self, face: &VisibleFace, g: &[Vec2; 3], out: &mut [Vec3]) {
        for k in 0..3 {
            let i = face.idx[k];
            let [jx, jy] = self.jac[i];
            geom::axpy(&mut out[i], g[k][0], jx);
            geom::axpy(&mut out[i], g[k][1], jy);
        }
    }
}

/// Squared distance from `p` to segment `uv`, the clamped parameter, and `p - closest`.
#[inline]
fn segment_distance2(p: Vec2, u: Vec2, v: Vec2) -> (f64, f64, Vec2) {
    let e = geom::sub2(v, u);
    let r = geom::sub2(p, u);
    let len2 = geom::dot2(e, e);
    let t = if len2 > 0.0 { (geom::dot2(r, e) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let w = [r[0] - t * e[0], r[1] - t * e[1]];
    (geom::dot2(w, w), t, w)
}

/// Soft silhouette plus what is needed to backpropagate through it.
#[derive(Debug, Clone)]
pub struct SilhouetteRender {
    pub image: SilhouetteImage,
    /// `ln(1 - S)` per pixel, kept for a precise `1 - S`.
    log_uncovered: Vec<f64>,
    proj: Projection,
    vertex_count: usize,
}

impl SilhouetteRender {
    pub fn new(mesh: &Mesh, pose: &CameraPose, cfg: &RenderConfig) -> Result<Self> {
        let proj = Projection::new(mesh, pose, cfg)?;
        let mut log_uncovered = vec![0.0; cfg.width * cfg.height];
        for face in &proj.faces {
            proj.for_each_fragment(face, |frag| {
                log_uncovered[frag.pixel] -= softplus(frag.logit(proj.sigma));
            });
        }
        let values = log_uncovered.iter().map(|&l| (-l.exp_m1()).clamp(0.0, 1.0)).collect();
        Ok(Self {
            image: SilhouetteImage { width: cfg.width, height: cfg.height, values },
            log_uncovered,
            proj,
            vertex_count: mesh.vertices.len(),
        })
    }

    /// Vertex gradient of a scalar loss given its gradient with respect to every pixel.
    pub fn backward(&self, grad_image: &[f64]) -> Vec<Vec3> {
        assert_eq!(grad_image.len(), self.log_uncovered.len(), "gradient image size");
        let proj = &self.proj;
        let mut out = vec![[0.0; 3]; self.vertex_count];
        for face in &proj.faces {
            let mut g = [[0.0; 2]; 3];
            proj.for_each_fragment(face, |frag| {
                let gp = grad_image[frag.pixel];
                if gp == 0.0 {
                    return;
                }
                // dS/dx_j = (1 - S) D_j
                let x = frag.logit(proj.sigma);
                let gx = gp * self.log_uncovered[frag.pixel].exp() * sigmoid(x);
                let gd2 = if frag.inside { gx / proj.sigma } else { -gx / proj.sigma };
                Projection::d2_grad(frag, gd2, &mut g);
            });
            proj.scatter_screen_grad(face, &g, &mut out);
        }
        out
    }
}

/// Gradients of a color render with respect to vertex positions and vertex colors.
#[derive(Debug, Clone)]
pub struct ColorGrad {
    pub vertices: Vec<Vec3>,
    pub colors: Vec<Vec3>,
}

/// Soft color render plus what is needed to backpropagate through it.
#[derive(Debug, Clone)]
pub struct ColorRender {
    pub image: RgbImage,
    pub coverage: SilhouetteImage,
    log_uncovered: Vec<f64>,
    /// Per-pixel softmax max and normalizer, and the blended foreground color.
    max_logit: Vec<f64>,
    normalizer: Vec<f64>,
    blend: Vec<Vec3>,
    colors: Vec<Vec3>,
    gamma: f64,
    background: Vec3,
    proj: Projection,
}

struct Blend {
    lambda: [f64; 3],
    /// Raw barycentrics, the softened sum and the doubled area for the backward pass.
    raw: [f64; 3],
    total: f64,
    area2: f64,
}

impl ColorRender {
    pub fn new(mesh: &Mesh, pose: &CameraPose, cfg: &RenderConfig) -> Result<Self> {
        let colors = mesh
            .colors
            .clone()
            .ok_or_else(|| invalid("color render requires per-vertex colors"))?;
        let proj = Projection::new(mesh, pose, cfg)?;
        let npx = cfg.width * cfg.height;
        let mut log_uncovered = vec![0.0; npx];
        let mut max_logit = vec![f64::NEG_INFINITY; npx];
        let mut normalizer = vec![0.0; npx];
        let mut acc = vec![[0.0; 3]; npx];
        for face in &proj.faces {
            let verts = face.idx.map(|i| proj.screen[i]);
            proj.for_each_fragment(face, |frag| {
                let x = frag.logit(proj.sigma);
                log_uncovered[frag.pixel] -= softplus(x);
                let bl = blend_weights(&verts, frag.p);
                let qf: f64 = (0..3).map(|k| bl.lambda[k] * proj.q[face.idx[k]]).sum();
                let cf = interpolate(&colors, &face.idx, &bl.lambda);
                let s = qf / cfg.gamma - softplus(-x);
                let px = frag.pixel;
                if s > max_logit[px] {
                    let scale = (max_logit[px] - s).exp();
                    normalizer[px] = normalizer[px] * scale + 1.0;
                    acc[px] = geom::add(geom::scale(acc[px], scale), cf);
                    max_logit[px] = s;
                } else {
                    let e = (s - max_logit[px]).exp();
                    normalizer[px] += e;
                    geom::axpy(&mut acc[px], e, cf);
                }
            });
        }
        let bg = cfg.background;
        let mut cov = Vec::with_capacity(npx);
        let mut blend = Vec::with_capacity(npx);
        let mut pixels = Vec::with_capacity(npx);
        for px in 0..npx {
            let s = (-log_uncovered[px].exp_m1()).clamp(0.0, 1.0);
            let a = if normalizer[px] > 0.0 { geom::scale(acc[px], 1.0 / normalizer[px]) } else { bg };
            cov.push(s);
            blend.push(a);
            pixels.push([0, 1, 2].map(|k| (s * a[k] + (1.0 - s) * bg[k]).clamp(0.0, 1.0)));
        }
        Ok(Self {
            image: RgbImage { width: cfg.width, height: cfg.height, pixels },
            coverage: SilhouetteImage { width: cfg.width, height: cfg.height, values: cov },
            log_uncovered,
            max_logit,
            normalizer,
            blend,
            colors,
            gamma: cfg.gamma,
            background: bg,
            proj,
        })
    }

    /// Gradients given `dL/dpixel` for every RGB pixel.
    pub fn backward(&self, grad_image: &[Vec3]) -> ColorGrad {
        assert_eq!(grad_image.len(), self.blend.len(), "gradient image size");
        let proj = &self.proj;
        let mut gv = vec![[0.0; 3]; self.colors.len()];
        let mut gc = vec![[0.0; 3]; self.colors.len()];
        for face in &proj.faces {
            let verts = face.idx.map(|i| proj.screen[i]);
            let mut g_screen = [[0.0; 2]; 3];
            let mut g_q = [0.0; 3];
            proj.for_each_fragment(face, |frag| {
                let px = frag.pixel;
                let gi = grad_image[px];
                if gi == [0.0; 3] {
                    return;
                }
                let uncovered = self.log_uncovered[px].exp();
                let s_cov = 1.0 - uncovered;
                let a = self.blend[px];
                // I = S A + (1 - S) bg
                let g_cov = geom::dot(gi, geom::sub(a, self.background));
                let g_blend = geom::scale(gi, s_cov);

                let x = frag.logit(proj.sigma);
                let d = sigmoid(x);
                let bl = blend_weights(&verts, frag.p);
                let qf: f64 = (0..3).map(|k| bl.lambda[k] * proj.q[face.idx[k]]).sum();
                let cf = interpolate(&self.colors, &face.idx, &bl.lambda);
                let s = qf / self.gamma - softplus(-x);
                let weight = (s - self.max_logit[px]).exp() / self.normalizer[px];

                // Softmax: dA/ds_j = w_j (C_j - A), dA/dC_j = w_j.
                let g_s = weight * geom::dot(g_blend, geom::sub(cf, a));
                let g_cf = geom::scale(g_blend, weight);
                // s = q / gamma + ln D, ln D = -softplus(-x); coverage: dS/dx = (1 - S) D.
                let g_x = g_s * sigmoid(-x) + g_cov * uncovered * d;
                let g_qf = g_s / self.gamma;

                let mut g_lambda = [0.0; 3];
                for k in 0..3 {
                    let i = face.idx[k];
                    g_lambda[k] = g_qf * proj.q[i] + geom::dot(g_cf, self.colors[i]);
                    g_q[k] += g_qf * bl.lambda[k];
                    geom::axpy(&mut gc[i], bl.lambda[k], g_cf);
                }
                blend_weights_backward(&verts, frag.p, &bl, &g_lambda, &mut g_screen);
                let gd2 = if frag.inside { g_x / proj.sigma } else { -g_x / proj.sigma };
                Projection::d2_grad(frag, gd2, &mut g_screen);
            });
            proj.scatter_screen_grad(face, &g_screen, &mut gv);
            for k in 0..3 {
                let i = face.idx[k];
                geom::axpy(&mut gv[i], g_q[k], proj.q_grad[i]);
            }
        }
        ColorGrad { vertices: gv, colors: gc }
    }
}

/// Barycentric weights softly clamped to non-negative and renormalized. Pixels outside the
/// triangle take the color of the nearest part of it; the soft clamp keeps that continuous in the
/// first derivative.
fn blend_weights(v: &[Vec2; 3], p: Vec2) -> Blend {
    let area2 = geom::cross2(geom::sub2(v[1], v[0]), geom::sub2(v[2], v[0]));
    let rel = v.map(|u| geom::sub2(u, p));
    let raw = [
        geom::cross2(rel[1], rel[2]) / area2,
        geom::cross2(rel[2], rel[0]) / area2,
        geom::cross2(rel[0], rel[1]) / area2,
    ];
    let soft = raw.map(|l| BARY_SOFTNESS * softplus(l / BARY_SOFTNESS));
    let total: f64 = soft.iter().sum();
    Blend { lambda: soft.map(|l| l / total), raw, total, area2 }
}

fn blend_weights_backward(v: &[Vec2; 3], p: Vec2, bl: &Blend, g_lambda: &[f64; 3], out: &mut [Vec2; 3]) {
    // lambda_i = soft_i / total, soft_i = tau * softplus(raw_i / tau)
    let dot: f64 = (0..3).map(|k| g_lambda[k] * bl.lambda[k]).sum();
    let g_raw = [0, 1, 2].map(|k| (g_lambda[k] - dot) / bl.total * sigmoid(bl.raw[k] / BARY_SOFTNESS));
    // raw_i = n_i / A with n_i = cross(v_{i+1} - p, v_{i+2} - p) and A = sum n_i.
    let rel = v.map(|u| geom::sub2(u, p));
    let g_area = -(0..3).map(|k| g_raw[k] * bl.raw[k]).sum::<f64>() / bl.area2;
    for i in 0..3 {
        let gn = g_raw[i] / bl.area2 + g_area;
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        // d cross(a, b)/da = (b.y, -b.x), d/db = (-a.y, a.x)
        out[j][0] += gn * rel[k][1];
        out[j][1] -= gn * rel[k][0];
        out[k][0] -= gn * rel[j][1];
        out[k][1] += gn * rel[j][0];
    }
}

fn interpolate(colors: &[Vec3], idx: &[usize; 3], lambda: &[f64; 3]) -> Vec3 {
    let mut c = [0.0; 3];
    for k in 0..3 {
        geom::axpy(&mut c, lambda[k], colors[idx[k]]);
    }
    c
}

/// Soft silhouette of `mesh` seen from `pose`.
pub fn render_silhouette(mesh: &Mesh, pose: &CameraPose, cfg: &RenderConfig) -> Result<SilhouetteImage> {
    Ok(SilhouetteRender::new(mesh, pose, cfg)?.image)
}

/// Soft color render of a mesh with per-vertex colors.
pub fn render_color(mesh: &Mesh, pose: &CameraPose, cfg: &RenderConfig) -> Result<RgbImage> {
    Ok(ColorRender::new(mesh, pose, cfg)?.image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::make_icosphere;
    use crate::render::{grad_check, CANONICAL_DISTANCE};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn weights(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn big_triangle(z: f64) -> Mesh {
        Mesh::new(vec![[-20.0, -20.0, z], [20.0, -20.0, z], [0.0, 20.0, z]], vec![[0, 1, 2]], None).unwrap()
    }

    #[test]
    fn sphere_silhouette_matches_disc_area() {
        let cfg = RenderConfig::square(32);
        let img = render_silhouette(&make_icosphere(1).unwrap(), &CameraPose::canonical(), &cfg).unwrap();
        let area = img.thresholded(0.5).sum();
        let f_px = 1.0 / (cfg.fov_deg.to_radians() / 2.0).tan() * 16.0;
        let disc = std::f64::consts::PI * (f_px / CANONICAL_DISTANCE).powi(2);
        assert!((area - disc).abs() / disc < 0.05, "area {area} vs disc {disc}");
    }

    #[test]
    fn empty_and_hidden_meshes_render_blank() {
        let cfg = RenderConfig::square(16);
        let empty = Mesh::new(vec![], vec![], None).unwrap();
        let img = render_silhouette(&empty, &CameraPose::canonical(), &cfg).unwrap();
        assert!(img.values.iter().all(|&v| v == 0.0));
        let behind = make_icosphere(1).unwrap().translated([0.0, 0.0, 20.0]);
        let img = render_silhouette(&behind, &CameraPose::canonical(), &cfg).unwrap();
        assert!(img.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deep_interior_tends_to_one_and_is_monotone_in_sigma() {
        let tri = big_triangle(0.0);
        let pose = CameraPose::canonical();
        let center = 8 * 16 + 8;
        let mut prev = 0.0;
        for sigma in [1e-1, 1e-2, 1e-3, 1e-4] {
            let img = render_silhouette(&tri, &pose, &RenderConfig::square(16).with_sigma(sigma)).unwrap();
            let v = img.values[center];
            assert!(v >= prev, "sigma {sigma}: {v} < {prev}");
            prev = v;
        }
        assert!(prev > 1.0 - 1e-9);
        // Every pixel of a 16x16 frame lies strictly inside this triangle.
        let small = render_silhouette(&tri, &pose, &RenderConfig::square(16).with_sigma(1e-3)).unwrap();
        let large = render_silhouette(&tri, &pose, &RenderConfig::square(16).with_sigma(1e-2)).unwrap();
        for (s, l) in small.values.iter().zip(&large.values) {
            assert!(l <= s);
        }
    }

    #[test]
    fn values_stay_in_unit_interval() {
        let m = make_icosphere(2).unwrap();
        for sigma in [1e-5, 1e-3, 1e-1] {
            let img = render_silhouette(&m, &CameraPose::canonical(), &RenderConfig::square(24).with_sigma(sigma)).unwrap();
            assert!(img.values.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn face_order_does_not_matter() {
        let m = make_icosphere(2).unwrap();
        let mut r = m.clone();
        r.faces.reverse();
        r.faces.swap(3, 100);
        let cfg = RenderConfig::square(32).with_sigma(1e-3);
        let pose = CameraPose::at(30.0, 20.0).unwrap();
        let a = render_silhouette(&m, &pose, &cfg).unwrap();
        let b = render_silhouette(&r, &pose, &cfg).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rotating_mesh_and_camera_together_is_invisible() {
        let mut m = make_icosphere(2).unwrap();
        for v in &mut m.vertices {
            v[0] *= 1.3;
            v[1] *= 0.6 + 0.2 * v[0];
        }
        let cfg = RenderConfig::square(32).with_sigma(1e-3);
        for theta in [17.0, 90.0, 211.0] {
            let rotated = Mesh { vertices: m.vertices.iter().map(|&v| geom::rotate_y(v, theta)).collect(), ..m.clone() };
            let a = render_silhouette(&m, &CameraPose::at(40.0, 15.0).unwrap(), &cfg).unwrap();
            let b = render_silhouette(&rotated, &CameraPose::at(40.0 + theta, 15.0).unwrap(), &cfg).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() < 1e-5, "theta {theta}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn pole_view_is_finite() {
        let img = render_silhouette(&make_icosphere(1).unwrap(), &CameraPose::at(0.0, 90.0).unwrap(), &RenderConfig::square(16)).unwrap();
        assert!(img.values.iter().all(|v| v.is_finite()));
        assert!(img.sum() > 10.0);
    }

    #[test]
    fn renders_are_bit_identical() {
        let m = make_icosphere(2).unwrap().with_uniform_color([0.2, 0.4, 0.9]);
        let pose = CameraPose::at(123.0, -10.0).unwrap();
        let cfg = RenderConfig::square(32);
        assert_eq!(render_silhouette(&m, &pose, &cfg).unwrap(), render_silhouette(&m, &pose, &cfg).unwrap());
        assert_eq!(render_color(&m, &pose, &cfg).unwrap(), render_color(&m, &pose, &cfg).unwrap());
    }

    #[test]
    fn color_examples() {
        let cfg = RenderConfig::square(16);
        let red = big_triangle(0.0).with_uniform_color([1.0, 0.0, 0.0]);
        let img = render_color(&red, &CameraPose::canonical(), &cfg).unwrap();
        for k in 0..3 {
            assert!((img.pixels[8 * 16 + 8][k] - [1.0, 0.0, 0.0][k]).abs() < 1e-3);
        }
        let far = make_icosphere(0).unwrap().translated([40.0, 0.0, 0.0]).with_uniform_color([1.0, 0.0, 0.0]);
        let img = render_color(&far, &CameraPose::canonical(), &cfg).unwrap();
        assert!(img.pixels.iter().all(|&p| p == cfg.background));
        assert!(render_color(&big_triangle(0.0), &CameraPose::canonical(), &cfg).is_err());
    }

    #[test]
    fn nearer_triangle_wins_color_blend() {
        let mut m = big_triangle(0.0).with_uniform_color([1.0, 0.0, 0.0]);
        m.append(&big_triangle(1.0).with_uniform_color([0.0, 0.0, 1.0]));
        let img = render_color(&m, &CameraPose::canonical(), &RenderConfig::square(16)).unwrap();
        let p = img.pixels[8 * 16 + 8];
        assert!(p[2] > 0.99 && p[0] < 0.01, "{p:?}");
    }

    #[test]
    fn rejects_degenerate_config() {
        let m = make_icosphere(0).unwrap();
        let bad = RenderConfig::square(16).with_sigma(0.0);
        assert!(render_silhouette(&m, &CameraPose::canonical(), &bad).is_err());
        let loss = |m: &Mesh, p: &CameraPose, c: &RenderConfig| -> Result<(f64, Vec<Vec3>)> {
            let r = SilhouetteRender::new(m, p, c)?;
            Ok((r.image.sum(), r.backward(&vec![1.0; c.width * c.height])))
        };
        assert!(grad_check(loss, &m, &CameraPose::canonical(), &bad, 1e-2).is_err());
    }

    fn weighted_silhouette(seed: u64) -> impl Fn(&Mesh, &CameraPose, &RenderConfig) -> Result<(f64, Vec<Vec3>)> {
        move |m, p, c| {
            let w = weights(c.width * c.height, seed);
            let r = SilhouetteRender::new(m, p, c)?;
            let value = r.image.values.iter().zip(&w).map(|(a, b)| a * b).sum();
            Ok((value, r.backward(&w)))
        }
    }

    /// Pass fraction over the coordinates of all `poses` together. A face turning edge-on is culled
    /// and the loss jumps, so a single pose with a face within `h` of that point can fail a
    /// handful of coordinates even though the gradient is exact.
    fn pooled<F>(make_loss: impl Fn(u64) -> F, m: &Mesh, poses: &[CameraPose], cfg: &RenderConfig) -> (f64, usize)
    where
        F: Fn(&Mesh, &CameraPose, &RenderConfig) -> Result<(f64, Vec<Vec3>)>,
    {
        let (mut checked, mut passed) = (0usize, 0.0);
        for (i, pose) in poses.iter().enumerate() {
            let r = grad_check(make_loss(i as u64), m, pose, cfg, 1e-2).unwrap();
            checked += r.checked;
            passed += r.fraction_passing * r.checked as f64;
        }
        (passed / checked as f64, checked)
    }

    fn check_poses() -> Vec<CameraPose> {
        let mut poses = vec![CameraPose::canonical()];
        poses.extend(crate::render::sample_poses(19, 11));
        poses
    }

    #[test]
    fn silhouette_gradients_match_finite_differences() {
        let sum = |m: &Mesh, p: &CameraPose, c: &RenderConfig| -> Result<(f64, Vec<Vec3>)> {
            let r = SilhouetteRender::new(m, p, c)?;
            Ok((r.image.sum(), r.backward(&vec![1.0; c.width * c.height])))
        };
        let m0 = make_icosphere(0).unwrap();
        let report = grad_check(sum, &m0, &CameraPose::canonical(), &RenderConfig::square(16), 1e-2).unwrap();
        assert!(report.checked > 0 && report.fraction_passing >= 0.99, "{report:?}");

        let poses = check_poses();
        for (level, size) in [(0, 16), (0, 32), (1, 16), (1, 32)] {
            let m = make_icosphere(level).unwrap();
            let (fraction, checked) = pooled(weighted_silhouette, &m, &poses, &RenderConfig::square(size));
            assert!(checked > 100 && fraction >= 0.99, "level {level} size {size}: {fraction} of {checked}");
        }
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let m = make_icosphere(1).unwrap();
        let r = SilhouetteRender::new(&m, &CameraPose::canonical(), &RenderConfig::square(16)).unwrap();
        assert!(r.backward(&vec![0.0; 256]).iter().all(|g| *g == [0.0; 3]));
    }

    fn color_loss(w: &[Vec3], r: &ColorRender) -> f64 {
        r.image.pixels.iter().zip(w).map(|(p, q)| geom::dot(*p, *q)).sum()
    }

    fn random_colored(level: u32, seed: u64) -> Mesh {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = make_icosphere(level).unwrap();
        m.colors = Some((0..m.vertex_count()).map(|_| [0, 1, 2].map(|_| rng.random_range(0.0..1.0))).collect());
        m
    }

    #[test]
    fn color_gradients_match_finite_differences() {
        let cfg = RenderConfig { sigma: 3e-3, gamma: 1e-2, ..RenderConfig::square(16) };
        let pose = CameraPose::at(20.0, 10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w: Vec<Vec3> = (0..256).map(|_| [0, 1, 2].map(|_| rng.random_range(-1.0..1.0))).collect();
        let m = random_colored(1, 3);
        let r = ColorRender::new(&m, &pose, &cfg).unwrap();
        let g = r.backward(&w);

        // Vertex colors.
        let h = 1e-4;
        let (mut checked, mut passed) = (0, 0);
        for i in 0..m.vertex_count() {
            for k in 0..3 {
                let a = g.colors[i][k];
                if a.abs() <= 1e-6 {
                    continue;
                }
                let mut p = m.clone();
                p.colors.as_mut().unwrap()[i][k] += h;
                let mut q = m.clone();
                q.colors.as_mut().unwrap()[i][k] -= h;
                let num = (color_loss(&w, &ColorRender::new(&p, &pose, &cfg).unwrap())
                    - color_loss(&w, &ColorRender::new(&q, &pose, &cfg).unwrap()))
                    / (2.0 * h);
                checked += 1;
                if (a - num).abs() / a.abs().max(num.abs()) < 1e-3 {
                    passed += 1;
                }
            }
        }
        assert!(checked > 50 && passed == checked, "{passed}/{checked}");

        // Vertex positions.
        let poses = check_poses();
        for (level, size) in [(0, 16), (1, 32)] {
            let m = random_colored(level, 9);
            let cfg = RenderConfig { sigma: 3e-3, gamma: 1e-2, ..RenderConfig::square(size) };
            let make = |seed: u64| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let w: Vec<Vec3> = (0..size * size).map(|_| [0, 1, 2].map(|_| rng.random_range(-1.0..1.0))).collect();
                move |m: &Mesh, p: &CameraPose, c: &RenderConfig| -> Result<(f64, Vec<Vec3>)> {
                    let r = ColorRender::new(m, p, c)?;
                    Ok((color_loss(&w, &r), r.backward(&w).vertices))
                }
            };
            let (fraction, checked) = pooled(make, &m, &poses, &cfg);
            assert!(checked > 100 && fraction >= 0.99, "level {level}: {fraction} of {checked}");
        }
    }
}
