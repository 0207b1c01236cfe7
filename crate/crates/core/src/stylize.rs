//! Text-driven stylization: a Fourier-feature field over the surface predicts a color and a
//! bounded displacement along the normal for every vertex.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingProvider;
use crate::error::{invalid, Error, Result};
use crate::geom::{self, sigmoid, Vec3};
use crate::losses::style_loss_grad;
use crate::mesh::{vertex_normals, Mesh};
use crate::model::nn::{relu, relu_backward, Dense, ParamLayout};
use crate::optim::{Adam, AdamConfig};
use crate::render::{sample_pose, CameraPose, ColorRender, RenderConfig, RgbImage};

/// Turntable frame count.
pub const TURNTABLE_VIEWS: usize = 8;
/// Elevation of the turntable camera, degrees.
pub const TURNTABLE_ELEVATION: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StyleConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub views: usize,
    /// Displacement bound; `None` means 0.1 times the mesh's bounding radius.
    pub d_max: Option<f64>,
    pub fourier_features: usize,
    pub fourier_sigma: f64,
    pub trunk_width: usize,
    pub trunk_depth: usize,
    pub seed: u64,
    pub prompt: String,
    pub resolution: usize,
}

impl Default for StyleConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            learning_rate: 5e-4,
            views: 5,
            d_max: None,
            fourier_features: 128,
            fourier_sigma: 5.0,
            trunk_width: 128,
            trunk_depth: 3,
            seed: 0,
            prompt: String::new(),
            resolution: 64,
        }
    }
}

impl StyleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.views == 0 {
            return Err(invalid("view count must be positive"));
        }
        if let Some(d) = self.d_max {
            if !(d > 0.0 && d.is_finite()) {
                return Err(invalid(format!("d_max {d} must be positive")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning rate must be positive"));
        }
        if self.fourier_features == 0 || self.trunk_width == 0 || self.trunk_depth == 0 {
            return Err(invalid("field sizes must be positive"));
        }
        if !(self.fourier_sigma > 0.0 && self.fourier_sigma.is_finite()) {
            return Err(invalid("fourier sigma must be positive"));
        }
        crate::embedding::check_prompt(&self.prompt)?;
        Ok(())
    }
}

/// `[cos(2 pi B p); sin(2 pi B p)]` for a `K x 3` matrix `B`.
pub fn fourier_encode(p: Vec3, b: &[Vec3]) -> Vec<f64> {
    let mut out = vec![0.0; 2 * b.len()];
    let k = b.len();
    for (i, row) in b.iter().enumerate() {
        let (s, c) = (2.0 * PI * geom::dot(*row, p)).sin_cos();
        out[i] = c;
        out[k + i] = s;
    }
    out
}

/// Seeded `K x 3` Gaussian matrix with standard deviation `sigma`.
pub fn fourier_matrix(k: usize, sigma: f64, seed: u64) -> Result<Vec<Vec3>> {
    let normal = Normal::new(0.0, sigma).map_err(|e| invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..k).map(|_| [0, 1, 2].map(|_| normal.sample(&mut rng))).collect())
}

#[derive(Debug, Clone)]
pub struct StyleField {
    /// Frozen Fourier matrix.
    pub b: Vec<Vec3>,
    pub d_max: f64,
    pub layout: ParamLayout,
    pub params: Vec<f64>,
    trunk: Vec<Dense>,
    displacement: Dense,
    color: Dense,
}

/// Per-point activations for the backward pass.
struct FieldPass {
    acts: Vec<Vec<f64>>,
    raw_d: f64,
    raw_c: [f64; 3],
}

impl StyleField {
    /// Trunk initialized at random, both branches at zero: the initial field is grey with no
    /// displacement.
    pub fn new(cfg: &StyleConfig, d_max: f64) -> Result<Self> {
        let b = fourier_matrix(cfg.fourier_features, cfg.fourier_sigma, cfg.seed)?;
        let mut layout = ParamLayout::default();
        let mut trunk = Vec::new();
        let mut nin = 2 * cfg.fourier_features;
        for i in 0..cfg.trunk_depth {
            trunk.push(Dense::new(&mut layout, &format!("trunk{i}"), nin, cfg.trunk_width));
            nin = cfg.trunk_width;
        }
        let displacement = Dense::new(&mut layout, "displacement", nin, 1);
        let color = Dense::new(&mut layout, "color", nin, 3);
        let mut params = vec![0.0; layout.len];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        for layer in &trunk {
            let normal = Normal::new(0.0, (2.0 / layer.nin as f64).sqrt()).map_err(|e| invalid(e.to_string()))?;
            for p in &mut params[layer.w.clone()] {
                *p = normal.sample(&mut rng);
            }
        }
        Ok(Self { b, d_max, layout, params, trunk, displacement, color })
    }

    fn pass(&self, p: Vec3) -> FieldPass {
        let mut acts = vec![fourier_encode(p, &self.b)];
        for layer in &self.trunk {
            let next = relu(layer.forward(&self.params, acts.last().expect("input")));
            acts.push(next);
        }
        let h = acts.last().expect("trunk output");
        let raw_d = self.displacement.forward(&self.params, h)[0];
        let c = self.color.forward(&self.params, h);
        FieldPass { acts, raw_d, raw_c: [c[0], c[1], c[2]] }
    }

    /// Color in `[0, 1]^3` and displacement in `[-d_max, d_max]` at `p`.
    pub fn evaluate(&self, p: Vec3) -> (Vec3, f64) {
        let f = self.pass(p);
        (f.raw_c.map(sigmoid), self.d_max * f.raw_d.tanh())
    }

    /// Accumulates the parameter gradient for one point given output gradients.
    fn backward(&self, f: &FieldPass, g_color: Vec3, g_disp: f64, grad: &mut [f64]) {
        let t = f.raw_d.tanh();
        let g_raw_d = [g_disp * self.d_max * (1.0 - t * t)];
        let g_raw_c: Vec<f64> = (0..3)
            .map(|k| {
                let s = sigmoid(f.raw_c[k]);
                g_color[k] * s * (1.0 - s)
            })
            .collect();
        let h = f.acts.last().expect("trunk output");
        let mut g = self.displacement.backward(&self.params, h, &g_raw_d, grad);
        for (a, b) in g.iter_mut().zip(self.color.backward(&self.params, h, &g_raw_c, grad)) {
            *a += b;
        }
        for (i, layer) in self.trunk.iter().enumerate().rev() {
            g = relu_backward(&f.acts[i + 1], g);
            g = layer.backward(&self.params, &f.acts[i], &g, grad);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleStep {
    pub loss: f64,
    pub best: f64,
    pub max_displacement: f64,
    pub color_min: f64,
    pub color_max: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StyleTrace {
    pub steps: Vec<StyleStep>,
    /// Set when a non-finite loss stopped the run early.
    pub aborted: Option<String>,
}

#[derive(Debug, Clone)]
pub struct StyleResult {
    pub mesh: Mesh,
    pub field: StyleField,
    pub d_max: f64,
    pub trace: StyleTrace,
}

/// Colors and displaces `base` with `field`; displacement starts from `base` every time.
pub fn apply_field(base: &Mesh, normals: &[Vec3], field: &StyleField) -> (Mesh, Vec<f64>) {
    let mut mesh = base.clone();
    let mut colors = Vec::with_capacity(base.vertices.len());
    let mut disp = Vec::with_capacity(base.vertices.len());
    for (v, n) in mesh.vertices.iter_mut().zip(normals) {
        let (c, d) = field.evaluate(*v);
        geom::axpy(v, d, *n);
        colors.push(c);
        disp.push(d);
    }
    mesh.colors = Some(colors);
    (mesh, disp)
}

pub fn stylize(base: &Mesh, cfg: &StyleConfig, provider: &dyn EmbeddingProvider) -> Result<StyleResult> {
    stylize_with_progress(base, cfg, provider, &mut |_, _| {})
}

pub fn stylize_with_progress(
    base: &Mesh,
    cfg: &StyleConfig,
    provider: &dyn EmbeddingProvider,
    progress: &mut dyn FnMut(usize, usize),
) -> Result<StyleResult> {
    cfg.validate()?;
    base.validate()?;
    base.check_watertight()?;
    if !provider.supports_image_gradient() {
        return Err(invalid("stylization needs a provider with image gradients"));
    }
    let d_max = cfg.d_max.unwrap_or(0.1 * base.bounding_radius());
    let normals = vertex_normals(base)?;
    let text = provider.embed_text(&cfg.prompt)?;
    let rcfg = RenderConfig::square(cfg.resolution);
    let mut field = StyleField::new(cfg, d_max)?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.learning_rate), field.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = StyleTrace::default();
    let mut best = (f64::INFINITY, field.params.clone());

    for it in 0..cfg.iterations {
        let passes: Vec<FieldPass> = base.vertices.iter().map(|&p| field.pass(p)).collect();
        let mut mesh = base.clone();
        let mut colors = Vec::with_capacity(passes.len());
        let mut max_d: f64 = 0.0;
        let (mut cmin, mut cmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for ((v, n), f) in mesh.vertices.iter_mut().zip(&normals).zip(&passes) {
            let d = d_max * f.raw_d.tanh();
            let c = f.raw_c.map(sigmoid);
            geom::axpy(v, d, *n);
            max_d = max_d.max(d.abs());
            for k in c {
                cmin = cmin.min(k);
                cmax = cmax.max(k);
            }
            colors.push(c);
        }
        mesh.colors = Some(colors);

        let poses: Vec<CameraPose> = (0..cfg.views).map(|_| sample_pose(&mut rng)).collect();
        let renders = poses.iter().map(|p| ColorRender::new(&mesh, p, &rcfg)).collect::<Result<Vec<_>>>()?;
        let images: Vec<RgbImage> = renders.iter().map(|r| r.image.clone()).collect();
        let (loss, grads) = style_loss_grad(&images, &text, provider, true)?;
        if !loss.is_finite() {
            let msg = format!("non-finite style loss at iteration {it}; keeping the best field");
            log::warn!("{msg}");
            trace.aborted = Some(msg);
            break;
        }
        if loss < best.0 {
            best = (loss, field.params.clone());
        }
        trace.steps.push(StyleStep { loss, best: best.0, max_displacement: max_d, color_min: cmin, color_max: cmax });

        let mut g_vert = vec![[0.0; 3]; mesh.vertices.len()];
        let mut g_col = vec![[0.0; 3]; mesh.vertices.len()];
        for (r, g) in renders.iter().zip(grads.expect("gradient requested")) {
            let cg = r.backward(&g);
            for i in 0..g_vert.len() {
                geom::add_assign(&mut g_vert[i], cg.vertices[i]);
                geom::add_assign(&mut g_col[i], cg.colors[i]);
            }
        }
        let mut grad = vec![0.0; field.params.len()];
        for ((f, n), (gv, gc)) in passes.iter().zip(&normals).zip(g_vert.iter().zip(&g_col)) {
            field.backward(f, *gc, geom::dot(*gv, *n), &mut grad);
        }
        if grad.iter().any(|g| !g.is_finite()) {
            let msg = format!("non-finite gradient at iteration {it}; keeping the best field");
            log::warn!("{msg}");
            trace.aborted = Some(msg);
            break;
        }
        adam.step(&mut field.params, &grad);
        progress(it + 1, cfg.iterations);
    }
    if trace.aborted.is_some() {
        field.params = best.1;
    }
    let (mesh, _) = apply_field(base, &normals, &field);
    if mesh.vertices.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { component: "style" });
    }
    Ok(StyleResult { mesh, field, d_max, trace })
}

/// `TURNTABLE_VIEWS` renders side by side, azimuth stepping by `360 / TURNTABLE_VIEWS`.
pub fn turntable(mesh: &Mesh, size: usize) -> Result<RgbImage> {
    let colored = match mesh.colors {
        Some(_) => mesh.clone(),
        None => mesh.with_uniform_color([crate::render::FLAT_GREY; 3]),
    };
    let cfg = RenderConfig::square(size);
    let w = size * TURNTABLE_VIEWS;
    let mut pixels = vec![[0.0; 3]; w * size];
    for k in 0..TURNTABLE_VIEWS {
        let pose = CameraPose::at(k as f64 * 360.0 / TURNTABLE_VIEWS as f64, TURNTABLE_ELEVATION)?;
        let img = crate::render::render_color(&colored, &pose, &cfg)?;
        for y in 0..size {
            pixels[y * w + k * size..y * w + (k + 1) * size].copy_from_slice(&img.pixels[y * size..(y + 1) * size]);
        }
    }
    Ok(RgbImage { width: w, height: size, pixels })
}
