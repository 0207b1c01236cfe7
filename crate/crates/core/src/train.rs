//! Training the encoder-decoder on a procedural dataset, and evaluating checkpoints.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{voxel_bounds, Instance};
use crate::embedding::{toy_provider, EmbeddingProvider, EmbeddingVector};
use crate::error::{invalid, Error, Result};
use crate::geom::{self, Vec3};
use crate::losses::{multiscale_iou_grad, multiview_clip, pyramid, total_loss, viewpoint_loss_grad, wrapped_difference, EmbedView, LossParts, LossWeights};
use crate::mesh::{voxel_iou, voxelize_in, Mesh, Regularizer};
use crate::model::{Checkpoint, Model, ModelConfig, OptimizerState};
use crate::optim::{Adam, AdamConfig};
use crate::render::{sample_pose, sample_poses, CameraPose, render_silhouette, RenderConfig, SilhouetteImage, SilhouetteRender};
use crate::sketch::Sketch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// 2000 in the reference schedule.
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Learning-rate decay period in epochs (800 in the reference schedule).
    pub decay_every: usize,
    pub decay_factor: f64,
    pub weights: LossWeights,
    /// Silhouette loss resolution; sketches are box-downsampled to it.
    pub render_resolution: usize,
    pub embed_resolution: usize,
    pub embed_view: EmbedView,
    /// Views per sample for the embedding term.
    pub pose_count: usize,
    /// Chance per sample and epoch of replacing its sketch by one rendered from the instance's
    /// mesh at a freshly drawn pose.
    pub view_augmentation: f64,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 8,
            adam: AdamConfig::with_lr(3e-4),
            decay_every: 200,
            decay_factor: 0.3,
            weights: LossWeights { lambda_r: 0.001, lambda_v: 1e-5, ..LossWeights::default() },
            render_resolution: 32,
            embed_resolution: 32,
            embed_view: EmbedView::Silhouette,
            pose_count: 1,
            view_augmentation: 0.5,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.decay_every == 0 {
            return Err(invalid("epochs, batch size and decay period must be positive"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(invalid("decay factor must lie in (0, 1]"));
        }
        self.adam.validate()?;
        self.weights.validate()?;
        self.model.validate()?;
        let r = self.render_resolution;
        if !r.is_power_of_two() || r < 4 << self.weights.pyramid_depth() {
            return Err(invalid(format!("render resolution {r} must be a power of two with room for the pyramid")));
        }
        if !(0.0..=1.0).contains(&self.view_augmentation) {
            return Err(invalid("view augmentation must be a probability"));
        }
        if self.weights.lambda_clip > 0.0 && self.pose_count == 0 {
            return Err(invalid("pose count must be positive when the embedding term is on"));
        }
        Ok(())
    }

    /// Step size during `epoch` (zero-based).
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.adam.learning_rate * self.decay_factor.powi((epoch / self.decay_every) as i32)
    }
}

/// Means over the training samples of one epoch, before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub total: f64,
    pub ms: f64,
    pub r: f64,
    pub clip: f64,
    pub v: f64,
}

/// SHA-256 over instance names, poses, sketches and voxels.
pub fn dataset_fingerprint(instances: &[Instance]) -> String {
    let mut h = Sha256::new();
    for inst in instances {
        h.update(inst.name.as_bytes());
        h.update(serde_json::to_vec(&inst.meta).unwrap_or_default());
        h.update(inst.sketch.values.iter().map(|&v| (v > 0.5) as u8).collect::<Vec<_>>());
        h.update(inst.voxels.to_bits());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// The sketch resampled for the encoder.
pub fn model_input(sketch: &SilhouetteImage, model: &ModelConfig) -> Result<SilhouetteImage> {
    Sketch::from_occupancy(sketch)?.at_resolution(model.input_resolution)
}

struct Sample {
    input: SilhouetteImage,
    target: Vec<SilhouetteImage>,
    pose: CameraPose,
    text: Option<EmbeddingVector>,
    mesh: Mesh,
    sketch_resolution: usize,
}

impl Sample {
    fn build(sketch: &SilhouetteImage, pose: CameraPose, text: Option<EmbeddingVector>, mesh: Mesh, config: &TrainConfig) -> Result<Self> {
        let sketch_resolution = sketch.width;
        let sketch = Sketch::from_occupancy(sketch)?;
        Ok(Self {
            input: sketch.at_resolution(config.model.input_resolution)?,
            target: pyramid(&sketch.at_resolution(config.render_resolution)?, config.weights.pyramid_depth())?,
            pose,
            text,
            mesh,
            sketch_resolution,
        })
    }

    /// The same instance sketched from `pose`.
    fn viewed_from(&self, pose: CameraPose, config: &TrainConfig) -> Result<Self> {
        let cfg = RenderConfig::square(self.sketch_resolution);
        let sketch = render_silhouette(&self.mesh, &pose, &cfg)?.thresholded(0.5);
        Self::build(&sketch, pose, self.text.clone(), self.mesh.clone(), config)
    }
}

pub struct Trainer<'a> {
    pub model: Model,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub metrics: Vec<EpochMetrics>,
    pub fingerprint: String,
    adam: Adam,
    samples: Vec<Sample>,
    regularizer: Regularizer,
    provider: &'a dyn EmbeddingProvider,
}

impl<'a> Trainer<'a> {
    /// Fresh model. The embedding term uses the category word as prompt; a provider without image
    /// gradients is replaced by the toy provider.
    pub fn new(instances: &[Instance], config: TrainConfig, provider: Option<&'a dyn EmbeddingProvider>) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model.clone(), config.seed)?;
        let adam = Adam::new(config.adam, model.params.len()).single_precision();
        Self::assemble(instances, config, model, adam, 0, Vec::new(), provider)
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`] on the same dataset.
    pub fn resume(ck: Checkpoint, instances: &[Instance], provider: Option<&'a dyn EmbeddingProvider>) -> Result<Self> {
        let fingerprint = dataset_fingerprint(instances);
        if fingerprint != ck.dataset_fingerprint {
            return Err(Error::Checkpoint("dataset differs from the one the checkpoint was trained on".into()));
        }
        let state = ck.optimizer.ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state".into()))?;
        let mut adam = Adam::new(ck.train.adam, ck.model.params.len()).single_precision();
        adam.step = state.step;
        adam.m = state.m;
        adam.v = state.v;
        Self::assemble(instances, ck.train, ck.model, adam, ck.epoch, ck.metrics, provider)
    }

    fn assemble(
        instances: &[Instance],
        config: TrainConfig,
        model: Model,
        adam: Adam,
        epoch: usize,
        metrics: Vec<EpochMetrics>,
        provider: Option<&'a dyn EmbeddingProvider>,
    ) -> Result<Self> {
        if instances.is_empty() {
            return Err(invalid("training set is empty"));
        }
        let provider: &dyn EmbeddingProvider = match provider {
            Some(p) if p.supports_image_gradient() => p,
            Some(_) => {
                log::warn!("provider has no image gradients; training against the toy provider");
                toy_provider()
            }
            None => toy_provider(),
        };
        let samples = instances
            .iter()
            .map(|inst| {
                let text = if config.weights.lambda_clip > 0.0 {
                    Some(provider.embed_text(inst.meta.category.name())?)
                } else {
                    None
                };
                Sample::build(&inst.sketch, inst.pose(), text, inst.mesh.clone(), &config)
            })
            .collect::<Result<Vec<_>>>()?;
        let regularizer = Regularizer::new(model.template())?;
        Ok(Self {
            model,
            fingerprint: dataset_fingerprint(instances),
            config,
            epoch,
            metrics,
            adam,
            samples,
            regularizer,
            provider,
        })
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    /// Loss parts of one sample, accumulating its parameter gradient into `grad`.
    fn sample_step(&self, s: &Sample, poses: &[CameraPose], grad: &mut [f64]) -> Result<LossParts> {
        let w = &self.config.weights;
        let f = self.model.forward_trusted(&s.input)?;
        if f.vertices.iter().flatten().any(|v| !v.is_finite()) || !f.pose.azimuth.is_finite() || !f.pose.elevation.is_finite() {
            return Err(Error::NonFinite { component: "network output" });
        }
        let mesh = Mesh { vertices: f.vertices.clone(), faces: self.model.template().faces.clone(), colors: None };
        let mut gv: Vec<Vec3> = vec![[0.0; 3]; mesh.vertices.len()];
        let add = |gv: &mut Vec<Vec3>, g: &[Vec3], k: f64| gv.iter_mut().zip(g).for_each(|(a, b)| geom::axpy(a, k, *b));

        let render = SilhouetteRender::new(&mesh, &s.pose, &RenderConfig::square(self.config.render_resolution))?;
        let (ms, g_img) = multiscale_iou_grad(&render.image, &s.target, &w.lambda_scales)?;
        add(&mut gv, &render.backward(&g_img), w.lambda_ms);

        let lap = self.regularizer.laplacian(&mesh.vertices)?;
        let flat = self.regularizer.flatten(&mesh.vertices)?;
        add(&mut gv, &lap.grad, w.lambda_r);
        add(&mut gv, &flat.grad, w.lambda_r);

        let mut clip = 0.0;
        if let Some(text) = &s.text {
            let cfg = RenderConfig::square(self.config.embed_resolution);
            let (value, g) = multiview_clip(&mesh, text, poses, self.provider, &cfg, self.config.embed_view, true)?;
            clip = value;
            add(&mut gv, &g.expect("gradient requested"), w.lambda_clip);
        }

        let (v, [da, de]) = viewpoint_loss_grad(&f.pose, &s.pose);
        let parts = LossParts { ms, r: lap.value + flat.value, clip, v };
        total_loss(&parts, w)?;
        self.model.backward(&f, &gv, [w.lambda_v * da, w.lambda_v * de], grad);
        Ok(parts)
    }

    /// One pass over the shuffled training set. On a non-finite loss the epoch is rolled back
    /// and [`Error::Diverged`] names it.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        if self.finished() {
            return Err(invalid("training already finished"));
        }
        let epoch = self.epoch;
        let lr = self.config.learning_rate(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.shuffle(&mut rng);
        let poses: Vec<Vec<CameraPose>> =
            order.iter().map(|_| (0..self.config.pose_count).map(|_| sample_pose(&mut rng)).collect()).collect();
        let views: Vec<Option<CameraPose>> = order
            .iter()
            .map(|_| {
                let fresh = rng.random::<f64>() < self.config.view_augmentation;
                let pose = sample_pose(&mut rng);
                fresh.then_some(pose)
            })
            .collect();

        let snapshot = (self.model.params.clone(), self.adam.clone());
        let mut sums = LossParts::default();
        let mut total = 0.0;
        if let Err(e) = self.pass(&order, &poses, &views, lr, &mut sums, &mut total) {
            self.model.params = snapshot.0;
            self.adam = snapshot.1;
            return Err(match e {
                Error::NonFinite { .. } => {
                    log::warn!("epoch {} diverged: {e}", epoch + 1);
                    Error::Diverged { iteration: epoch + 1 }
                }
                other => other,
            });
        }
        let k = self.samples.len() as f64;
        let m = EpochMetrics { epoch: epoch + 1, lr, total: total / k, ms: sums.ms / k, r: sums.r / k, clip: sums.clip / k, v: sums.v / k };
        self.metrics.push(m);
        self.epoch += 1;
        Ok(m)
    }

    fn pass(
        &mut self,
        order: &[usize],
        poses: &[Vec<CameraPose>],
        views: &[Option<CameraPose>],
        lr: f64,
        sums: &mut LossParts,
        total: &mut f64,
    ) -> Result<()> {
        let b = self.config.batch_size;
        for ((chunk, chunk_poses), chunk_views) in order.chunks(b).zip(poses.chunks(b)).zip(views.chunks(b)) {
            let mut grad = vec![0.0; self.model.params.len()];
            for ((&i, p), view) in chunk.iter().zip(chunk_poses).zip(chunk_views) {
                let parts = match view {
                    Some(pose) => {
                        let s = self.samples[i].viewed_from(*pose, &self.config)?;
                        self.sample_step(&s, p, &mut grad)?
                    }
                    None => self.sample_step(&self.samples[i], p, &mut grad)?,
                };
                *total += total_loss(&parts, &self.config.weights)?;
                sums.ms += parts.ms;
                sums.r += parts.r;
                sums.clip += parts.clip;
                sums.v += parts.v;
            }
            let scale = 1.0 / chunk.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite { component: "gradient" });
            }
            self.adam.update(&mut self.model.params, &grad, lr);
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            train: self.config.clone(),
            dataset_fingerprint: self.fingerprint.clone(),
            epoch: self.epoch,
            optimizer: Some(OptimizerState { step: self.adam.step, m: self.adam.m.clone(), v: self.adam.v.clone() }),
            metrics: self.metrics.clone(),
        }
    }
}

/// Trains to completion, calling `on_epoch` after every epoch (for logging and checkpointing).
pub fn train(
    instances: &[Instance],
    config: TrainConfig,
    provider: Option<&dyn EmbeddingProvider>,
    on_epoch: &mut dyn FnMut(&Trainer, &EpochMetrics) -> Result<()>,
) -> Result<Checkpoint> {
    let mut t = Trainer::new(instances, config, provider)?;
    while !t.finished() {
        let m = t.run_epoch()?;
        on_epoch(&t, &m)?;
    }
    Ok(t.checkpoint())
}

/// Single forward pass: mesh and predicted camera.
pub fn infer(sketch: &SilhouetteImage, checkpoint: &Checkpoint) -> Result<(Mesh, CameraPose)> {
    checkpoint.model.infer(&model_input(sketch, &checkpoint.model.config)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub voxel_resolution: usize,
    /// Views averaged for the embedding score.
    pub score_views: usize,
    pub score_resolution: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { voxel_resolution: 32, score_views: 3, score_resolution: 32, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    pub voxel_iou_mean: f64,
    /// The undeformed template scored the same way.
    pub template_iou_mean: f64,
    pub azimuth_mae_deg: f64,
    pub elevation_mae_deg: f64,
    /// Mean cosine between the category word and the grey views of each predicted mesh.
    pub clip_score: f64,
}

/// Scores predicted meshes and poses against ground truth.
pub fn evaluate(model: &Model, instances: &[Instance], provider: &dyn EmbeddingProvider, cfg: &EvalConfig) -> Result<EvalReport> {
    if instances.is_empty() {
        return Err(invalid("evaluation set is empty"));
    }
    let template = voxelize_in(model.template(), voxel_bounds(), cfg.voxel_resolution)?;
    let poses = sample_poses(cfg.score_views, cfg.seed);
    let rcfg = RenderConfig::square(cfg.score_resolution);
    let (mut iou, mut base, mut az, mut el, mut score) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for inst in instances {
        let (mesh, pose) = model.infer(&model_input(&inst.sketch, &model.config)?)?;
        let gt = if inst.voxels.resolution == cfg.voxel_resolution {
            inst.voxels.clone()
        } else {
            voxelize_in(&inst.mesh, voxel_bounds(), cfg.voxel_resolution)?
        };
        iou += voxel_iou(&voxelize_in(&mesh, voxel_bounds(), cfg.voxel_resolution)?, &gt)?;
        base += voxel_iou(&template, &gt)?;
        az += wrapped_difference(pose.azimuth, inst.meta.azimuth_deg).abs();
        el += (pose.elevation - inst.meta.elevation_deg).abs();
        score += crate::losses::clip_score(&mesh, inst.meta.category.name(), &poses, provider, &rcfg)?;
    }
    let n = instances.len() as f64;
    Ok(EvalReport {
        count: instances.len(),
        voxel_iou_mean: iou / n,
        template_iou_mean: base / n,
        azimuth_mae_deg: az / n,
        elevation_mae_deg: el / n,
        clip_score: score / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_instances, DatasetConfig};
    use crate::procedural::Category;

    fn tiny_model() -> ModelConfig {
        ModelConfig { input_resolution: 32, channels: [4, 4, 8, 8], latent_dim: 16, decoder_hidden: 16, view_hidden: 8, max_offset: 0.75 }
    }

    fn tiny() -> (Vec<Instance>, TrainConfig) {
        let data = DatasetConfig { categories: vec![Category::Table, Category::Lamp], count_per_category: 3, resolution: 32, ..DatasetConfig::default() };
        let cfg = TrainConfig { epochs: 4, batch_size: 2, decay_every: 2, model: tiny_model(), render_resolution: 32, ..TrainConfig::default() };
        (generate_instances(&data).unwrap(), cfg)
    }

    #[test]
    fn schedule_decays() {
        let c = TrainConfig { adam: AdamConfig::with_lr(1e-4), ..TrainConfig::default() };
        assert_eq!(c.learning_rate(0), 1e-4);
        assert_eq!(c.learning_rate(199), 1e-4);
        assert!((c.learning_rate(200) - 3e-5).abs() < 1e-18);
        assert!((c.learning_rate(499) - 9e-6).abs() < 1e-18);
    }

    #[test]
    fn resume_reproduces_the_next_epoch() {
        let (data, cfg) = tiny();
        let mut straight = Trainer::new(&data, cfg.clone(), None).unwrap();
        straight.run_epoch().unwrap();
        let bytes = straight.checkpoint().to_bytes().unwrap();
        let next = straight.run_epoch().unwrap();

        let mut resumed = Trainer::resume(Checkpoint::from_bytes(&bytes).unwrap(), &data, None).unwrap();
        let again = resumed.run_epoch().unwrap();
        assert!((again.total - next.total).abs() <= 1e-6);
        assert_eq!(resumed.model.params, straight.model.params);
        assert_eq!(resumed.checkpoint().to_bytes().unwrap(), straight.checkpoint().to_bytes().unwrap());
        assert_eq!(resumed.metrics.len(), 2);
    }

    #[test]
    fn training_is_deterministic_and_logs_every_component() {
        let (data, cfg) = tiny();
        let run = || {
            let mut log = Vec::new();
            let ck = train(&data, cfg.clone(), None, &mut |_, m| {
                log.push(*m);
                Ok(())
            })
            .unwrap();
            (ck.to_bytes().unwrap(), log)
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert_eq!(la.len(), 4);
        for m in &la {
            assert!(m.ms > 0.0 && m.r > 0.0 && m.clip > 0.0 && m.v > 0.0);
            assert!(m.total.is_finite());
        }
    }

    #[test]
    fn resume_rejects_other_data() {
        let (data, cfg) = tiny();
        let t = Trainer::new(&data, cfg, None).unwrap();
        let ck = t.checkpoint();
        assert!(Trainer::resume(ck, &data[1..], None).is_err());
        assert!(Trainer::new(&[], TrainConfig::default(), None).is_err());
    }

    #[test]
    fn divergence_rolls_back() {
        let (data, mut cfg) = tiny();
        cfg.adam.learning_rate = 1e300;
        let mut t = Trainer::new(&data, cfg, None).unwrap();
        let before = t.model.params.clone();
        // The first step overflows the single-precision weights; the next batch is non-finite.
        assert!(matches!(t.run_epoch(), Err(Error::Diverged { iteration: 1 })));
        assert_eq!(t.model.params, before);
        assert_eq!((t.epoch, t.metrics.len()), (0, 0));
    }

    #[test]
    fn evaluation_of_untrained_zero_model_matches_template() {
        let (data, cfg) = tiny();
        let m = Model::zeros(cfg.model).unwrap();
        let r = evaluate(&m, &data, toy_provider(), &EvalConfig::default()).unwrap();
        assert_eq!(r.count, 6);
        assert!((r.voxel_iou_mean - r.template_iou_mean).abs() < 1e-12);
        let az: f64 = data.iter().map(|i| wrapped_difference(0.0, i.meta.azimuth_deg).abs()).sum::<f64>() / 6.0;
        assert!((r.azimuth_mae_deg - az).abs() < 1e-9);
    }

    #[test]
    fn inference_is_deterministic() {
        let (data, cfg) = tiny();
        let t = Trainer::new(&data, cfg, None).unwrap();
        let ck = t.checkpoint();
        let a = infer(&data[0].sketch, &ck).unwrap();
        let b = infer(&data[0].sketch, &ck).unwrap();
        assert_eq!(a.0, b.0);
        a.0.validate().unwrap();
    }
}
