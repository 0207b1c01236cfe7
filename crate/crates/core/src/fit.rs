//! Per-object fit: deform a template icosphere until its silhouette matches one sketch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{toy_provider, EmbeddingProvider, EmbeddingVector};
use crate::error::{invalid, Error, Result};
use crate::geom::Vec3;
use crate::losses::{multiscale_iou_grad, multiview_clip, pyramid, total_loss, EmbedView, LossParts, LossWeights};
use crate::mesh::{Icosphere, Mesh, Regularizer};
use crate::optim::{Adam, AdamConfig};
use crate::render::{sample_pose, CameraPose, RenderConfig, SilhouetteRender};
use crate::sketch::Sketch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    /// Views per iteration for the embedding term.
    pub pose_count: usize,
    pub seed: u64,
    /// Silhouette render size; the sketch is resampled to it.
    pub resolution: usize,
    pub embed_resolution: usize,
    pub embed_view: EmbedView,
    pub template_subdivisions: u32,
    pub sigma: f64,
    pub prompt: Option<String>,
    /// Laplacian preconditioner strength at the start and end of the run.
    pub smoothing: f64,
    pub smoothing_final: f64,
    pub smoothing_stages: usize,
    /// Fraction of iterations during which only the radial scales move.
    pub radial_phase: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 600,
            learning_rate: 0.01,
            weights: LossWeights { lambda_r: 0.001, ..LossWeights::default() },
            pose_count: 3,
            seed: 0,
            resolution: 64,
            embed_resolution: 32,
            embed_view: EmbedView::FlatGrey,
            template_subdivisions: 3,
            sigma: 1e-4,
            prompt: None,
            smoothing: 10.0,
            smoothing_final: 10.0,
            smoothing_stages: 1,
            radial_phase: 0.3,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(invalid("iterations must be at least 1"));
        }
        AdamConfig::with_lr(self.learning_rate).validate()?;
        self.weights.validate()?;
        let depth = self.weights.pyramid_depth();
        if !self.resolution.is_power_of_two() || self.resolution < (4 << depth) {
            return Err(invalid(format!(
                "resolution must be a power of two of at least {}, got {}",
                4 << depth,
                self.resolution
            )));
        }
        if !(self.smoothing >= 0.0 && self.smoothing_final >= 0.0) {
            return Err(invalid("smoothing must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.radial_phase) {
            return Err(invalid("radial phase must lie in [0, 1]"));
        }
        if self.embed_resolution < 16 {
            return Err(invalid("embedding render must be at least 16px"));
        }
        if self.pose_count == 0 && self.weights.lambda_clip > 0.0 && self.prompt.is_some() {
            return Err(invalid("embedding term needs at least one pose"));
        }
        Ok(())
    }

    pub fn render_config(&self) -> RenderConfig {
        RenderConfig { sigma: self.sigma, ..RenderConfig::square(self.resolution) }
    }
}

/// Loss components after one iteration; `clip` is absent when the term was not evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitStep {
    pub ms: f64,
    pub r: f64,
    pub clip: Option<f64>,
    pub total: f64,
    pub best: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub steps: Vec<FitStep>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub mesh: Mesh,
    pub trace: FitTrace,
}

/// Embedding term state: provider with image gradients and the prompt embedding in its space.
struct ClipTerm<'a> {
    provider: &'a dyn EmbeddingProvider,
    text: EmbeddingVector,
}

fn clip_term<'a>(cfg: &FitConfig, provider: Option<&'a dyn EmbeddingProvider>, warnings: &mut Vec<String>) -> Option<ClipTerm<'a>> {
    let prompt = cfg.prompt.as_deref()?;
    if cfg.weights.lambda_clip == 0.0 {
        return None;
    }
    let provider: &dyn EmbeddingProvider = match provider {
        Some(p) if p.supports_image_gradient() => p,
        Some(_) => {
            warnings.push("provider has no image gradients; optimizing against the toy provider".into());
            toy_provider()
        }
        None => toy_provider(),
    };
    match provider.embed_text(prompt) {
        Ok(text) => Some(ClipTerm { provider, text }),
        Err(e) => {
            warnings.push(format!("embedding term skipped: {e}"));
            log::warn!("embedding term skipped: {e}");
            None
        }
    }
}

pub fn fit(sketch: &Sketch, pose: Option<CameraPose>, cfg: &FitConfig, provider: Option<&dyn EmbeddingProvider>) -> Result<FitResult> {
    fit_with_progress(sketch, pose, cfg, provider, &mut |_, _| {})
}

/// As [`fit`], calling `progress(done, total)` after every iteration.
pub fn fit_with_progress(
    sketch: &Sketch,
    pose: Option<CameraPose>,
    cfg: &FitConfig,
    provider: Option<&dyn EmbeddingProvider>,
    progress: &mut dyn FnMut(usize, usize),
) -> Result<FitResult> {
    cfg.validate()?;
    let pose = pose.unwrap_or_else(CameraPose::canonical);
    let render_cfg = cfg.render_config();
    let embed_cfg = RenderConfig::square(cfg.embed_resolution);
    let target = pyramid(&sketch.at_resolution(cfg.resolution)?.thresholded(0.5), cfg.weights.pyramid_depth())?;

    let template = Icosphere::new(cfg.template_subdivisions)?.mesh;
    let regularizer = Regularizer::new(&template)?;
    let n = template.vertices.len();
    let mut deformer = Deformer::new(&template, cfg.smoothing);
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.learning_rate), 4 * n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut trace = FitTrace::default();
    let clip = clip_term(cfg, provider, &mut trace.warnings);
    let w = &cfg.weights;
    let mut mesh = template.clone();
    let mut best = f64::INFINITY;
    let radial_until = (cfg.radial_phase * cfg.iterations as f64).round() as usize;
    let stages = cfg.smoothing_stages.max(1);

    for it in 0..cfg.iterations {
        let stage = it * stages / cfg.iterations;
        let lambda = stage_smoothing(cfg, stage, stages);
        if lambda != deformer.lambda {
            deformer.set_smoothing(lambda);
            adam = Adam::new(AdamConfig::with_lr(cfg.learning_rate), 4 * n);
        }
        mesh.vertices = deformer.vertices();
        let mut grad = vec![[0.0; 3]; n];
        let add = |grad: &mut Vec<Vec3>, g: &[Vec3], s: f64| {
            for (a, b) in grad.iter_mut().zip(g) {
                crate::geom::axpy(a, s, *b);
            }
        };

        let render = SilhouetteRender::new(&mesh, &pose, &render_cfg)?;
        let (ms, g_img) = multiscale_iou_grad(&render.image, &target, &w.lambda_scales)?;
        add(&mut grad, &render.backward(&g_img), w.lambda_ms);

        let lap = regularizer.laplacian(&mesh.vertices)?;
        let flat = regularizer.flatten(&mesh.vertices)?;
        add(&mut grad, &lap.grad, w.lambda_r);
        add(&mut grad, &flat.grad, w.lambda_r);
        let r = lap.value + flat.value;

        let mut clip_value = None;
        if let Some(term) = &clip {
            let poses: Vec<CameraPose> = (0..cfg.pose_count).map(|_| sample_pose(&mut rng)).collect();
            match multiview_clip(&mesh, &term.text, &poses, term.provider, &embed_cfg, cfg.embed_view, true) {
                Ok((v, g)) => {
                    clip_value = Some(v);
                    add(&mut grad, &g.expect("gradient requested"), w.lambda_clip);
                }
                Err(e) => {
                    let msg = format!("iteration {it}: embedding term skipped: {e}");
                    log::warn!("{msg}");
                    trace.warnings.push(msg);
                }
            }
        }

        let parts = LossParts { ms, r, clip: clip_value.unwrap_or(0.0), v: 0.0 };
        let total = match total_loss(&parts, w) {
            Ok(t) => t,
            Err(_) => return Err(Error::Diverged { iteration: it }),
        };
        if grad.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { iteration: it });
        }
        best = best.min(total);
        trace.steps.push(FitStep { ms, r, clip: clip_value, total, best });

        let mut g = deformer.pull_back(&grad);
        if it < radial_until {
            for row in g.chunks_exact_mut(4) {
                row[..3].fill(0.0);
            }
        }
        adam.step(&mut deformer.params, &g);
        progress(it + 1, cfg.iterations);
    }
    // The trace describes the mesh before each update; return the mesh the last entry scored.
    Ok(FitResult { mesh, trace })
}

fn stage_smoothing(cfg: &FitConfig, stage: usize, stages: usize) -> f64 {
    if stages == 1 {
        return cfg.smoothing;
    }
    let t = stage as f64 / (stages - 1) as f64;
    cfg.smoothing * (cfg.smoothing_final / cfg.smoothing).powf(t)
}

/// Template deformation `v_i = t_i (1 + s_i) + o_i` with the per-vertex offset `o_i` and radial
/// scale `s_i` stored preconditioned: the rows `[o_i, s_i]` equal `(I + lambda L)^-1 U`, `L` the
/// combinatorial graph Laplacian and `U` the optimized parameters. Gradient steps on `U` then move
/// the surface smoothly instead of vertex by vertex.
struct Deformer {
    template: Vec<Vec3>,
    neighbors: Vec<Vec<u32>>,
    lambda: f64,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// Row-major `n x 4`.
    params: Vec<f64>,
}

impl Deformer {
    fn new(template: &Mesh, lambda: f64) -> Self {
        let neighbors = template.neighbors();
        let chol = Self::factor(&neighbors, lambda);
        Self {
            template: template.vertices.clone(),
            neighbors,
            lambda,
            chol,
            params: vec![0.0; 4 * template.vertices.len()],
        }
    }

    fn factor(neighbors: &[Vec<u32>], lambda: f64) -> nalgebra::Cholesky<f64, nalgebra::Dyn> {
        let n = neighbors.len();
        let mut m = nalgebra::DMatrix::<f64>::identity(n, n);
        for (i, nb) in neighbors.iter().enumerate() {
            m[(i, i)] += lambda * nb.len() as f64;
            for &j in nb {
                m[(i, j as usize)] -= lambda;
            }
        }
        m.cholesky().expect("I + lambda L is positive definite")
    }

    fn solve(&self, rows: &[f64]) -> Vec<f64> {
        let n = self.template.len();
        let rhs = nalgebra::DMatrix::from_fn(n, 4, |i, k| rows[4 * i + k]);
        let x = self.chol.solve(&rhs);
        (0..4 * n).map(|i| x[(i / 4, i % 4)]).collect()
    }

    /// `(I + lambda L) x`.
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        for (i, nb) in self.neighbors.iter().enumerate() {
            for k in 0..4 {
                let sum: f64 = nb.iter().map(|&j| x[4 * j as usize + k]).sum();
                out[4 * i + k] += self.lambda * (nb.len() as f64 * x[4 * i + k] - sum);
            }
        }
        out
    }

    /// Changes the preconditioner without moving the surface.
    fn set_smoothing(&mut self, lambda: f64) {
        let x = self.solve(&self.params);
        self.lambda = lambda;
        self.chol = Self::factor(&self.neighbors, lambda);
        self.params = self.apply(&x);
    }

    fn vertices(&self) -> Vec<Vec3> {
        let x = self.solve(&self.params);
        self.template
            .iter()
            .zip(x.chunks_exact(4))
            .map(|(t, r)| {
                let s = 1.0 + r[3];
                [t[0] * s + r[0], t[1] * s + r[1], t[2] * s + r[2]]
            })
            .collect()
    }

    fn pull_back(&self, grad: &[Vec3]) -> Vec<f64> {
        let rows: Vec<f64> = grad
            .iter()
            .zip(&self.template)
            .flat_map(|(g, t)| [g[0], g[1], g[2], crate::geom::dot(*g, *t)])
            .collect();
        // The system matrix is symmetric, so the adjoint solve is the same solve.
        self.solve(&rows)
    }
}
