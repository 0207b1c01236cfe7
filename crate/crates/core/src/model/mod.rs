//! Tiny encoder-decoder: a sketch becomes a shape code and a view code; the shape code deforms a
//! template icosphere through three cascaded offset stages and the view code predicts the camera.

pub mod checkpoint;
pub mod nn;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geom::Vec3;
use crate::mesh::{Icosphere, Mesh};
use crate::render::{CameraPose, SilhouetteImage, CANONICAL_DISTANCE};
use nn::{l2_normalize, l2_normalize_backward, relu, relu_backward, Conv, Dense, ParamLayout};

pub use checkpoint::{Checkpoint, OptimizerState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

/// Subdivision level of the decoded mesh (642 vertices).
pub const TEMPLATE_SUBDIVISIONS: u32 = 3;

/// Icosphere levels of the three decoder stages.
pub const DECODER_LEVELS: [usize; 3] = [1, 2, 3];

/// Input planes: occupancy plus x and y pixel coordinates in `[-1, 1]`.
const INPUT_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Sketch size the encoder accepts.
    pub input_resolution: usize,
    pub channels: [usize; 4],
    /// Shape and view code size (512 in the reference model).
    pub latent_dim: usize,
    pub decoder_hidden: usize,
    pub view_hidden: usize,
    /// Per-coordinate offset bound.
    pub max_offset: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_resolution: 64,
            channels: [8, 16, 32, 64],
            latent_dim: 128,
            decoder_hidden: 128,
            view_hidden: 64,
            max_offset: 0.75,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.input_resolution;
        if n < 16 || n % 16 != 0 {
            return Err(invalid(format!("input resolution {n} must be a positive multiple of 16")));
        }
        if self.channels.contains(&0) || self.latent_dim == 0 || self.decoder_hidden == 0 || self.view_hidden == 0 {
            return Err(invalid("layer sizes must be positive"));
        }
        if !(self.max_offset > 0.0 && self.max_offset.is_finite()) {
            return Err(invalid("max offset must be positive"));
        }
        Ok(())
    }
}

/// Unit-norm shape and view codes.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCodes {
    pub shape: Vec<f64>,
    pub view: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Layers {
    convs: [Conv; 4],
    shape_head: Dense,
    view_head: Dense,
    dec_hidden: Dense,
    dec_stages: [Dense; 3],
    view_fc1: Dense,
    view_fc2: Dense,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub params: Vec<f64>,
    layers: Layers,
    sphere: Icosphere,
}

/// Intermediate values of one forward pass, kept for the backward pass.
pub struct Forward {
    input: Vec<f64>,
    acts: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    shape_norm: f64,
    view_norm: f64,
    pub codes: LatentCodes,
    hidden: Vec<f64>,
    raw: Vec<f64>,
    view_hidden: Vec<f64>,
    view_out: Vec<f64>,
    pub vertices: Vec<Vec3>,
    pub pose: CameraPose,
}

impl Model {
    fn build(config: ModelConfig) -> Result<(ParamLayout, Layers, Icosphere)> {
        config.validate()?;
        let sphere = Icosphere::new(TEMPLATE_SUBDIVISIONS)?;
        let mut l = ParamLayout::default();
        let c = config.channels;
        let convs = [
            Conv::new(&mut l, "encoder.conv1", INPUT_CHANNELS, c[0]),
            Conv::new(&mut l, "encoder.conv2", c[0], c[1]),
            Conv::new(&mut l, "encoder.conv3", c[1], c[2]),
            Conv::new(&mut l, "encoder.conv4", c[2], c[3]),
        ];
        let shape_head = Dense::new(&mut l, "encoder.shape_head", c[3], config.latent_dim);
        let view_head = Dense::new(&mut l, "encoder.view_head", c[3], config.latent_dim);
        let dec_hidden = Dense::new(&mut l, "decoder.hidden", config.latent_dim, config.decoder_hidden);
        let dec_stages = DECODER_LEVELS.map(|lvl| {
            Dense::new(&mut l, &format!("decoder.stage{lvl}"), config.decoder_hidden, 3 * sphere.level_sizes[lvl])
        });
        let view_fc1 = Dense::new(&mut l, "viewpoint.fc1", config.latent_dim, config.view_hidden);
        let view_fc2 = Dense::new(&mut l, "viewpoint.fc2", config.view_hidden, 3);
        let layers = Layers { convs, shape_head, view_head, dec_hidden, dec_stages, view_fc1, view_fc2 };
        Ok((l, layers, sphere))
    }

    /// All weights zero: decodes to the template and predicts the canonical pose.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let (layout, layers, sphere) = Self::build(config.clone())?;
        let params = vec![0.0; layout.len];
        Ok(Self { config, layout, params, layers, sphere })
    }

    /// Seeded initialization, stored at single precision. Decoder stages start near zero so the
    /// first decoded meshes are close to the template.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stage_names: Vec<String> = DECODER_LEVELS.iter().map(|l| format!("decoder.stage{l}.weight")).collect();
        for (spec, range) in model.layout.clone().ranges() {
            if spec.name.ends_with(".bias") {
                continue;
            }
            let fan_in: usize = spec.shape[1..].iter().product();
            let mut std = (2.0 / fan_in as f64).sqrt();
            if spec.name.contains("head") || spec.name == "viewpoint.fc2.weight" {
                std = (1.0 / fan_in as f64).sqrt();
            }
            if stage_names.contains(&spec.name) {
                std *= 0.01;
            }
            let normal = Normal::new(0.0, std).map_err(|e| invalid(e.to_string()))?;
            for p in &mut model.params[range] {
                *p = normal.sample(&mut rng) as f32 as f64;
            }
        }
        Ok(model)
    }

    /// Replaces the parameters, checking length and finiteness.
    pub fn with_params(mut self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.layout.len {
            return Err(Error::Checkpoint(format!("expected {} parameters, got {}", self.layout.len, params.len())));
        }
        self.params = params;
        Ok(self)
    }

    pub fn template(&self) -> &Mesh {
        &self.sphere.mesh
    }

    fn check_finite(&self) -> Result<()> {
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite { component: "weight" });
        }
        Ok(())
    }

    fn input_planes(&self, sketch: &SilhouetteImage) -> Result<Vec<f64>> {
        let n = self.config.input_resolution;
        if sketch.width != n || sketch.height != n {
            return Err(invalid(format!("sketch is {}x{}, model expects {n}x{n}", sketch.width, sketch.height)));
        }
        let coord = |i: usize| 2.0 * (i as f64 + 0.5) / n as f64 - 1.0;
        let mut x = sketch.values.clone();
        x.extend((0..n * n).map(|i| coord(i % n)));
        x.extend((0..n * n).map(|i| coord(i / n)));
        Ok(x)
    }

    fn encode_cached(&self, sketch: &SilhouetteImage) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<f64>, LatentCodes, f64, f64)> {
        let input = self.input_planes(sketch)?;
        let p = &self.params;
        let mut n = self.config.input_resolution;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(4);
        for conv in &self.layers.convs {
            let x = acts.last().unwrap_or(&input);
            let y = relu(conv.forward(p, x, n));
            acts.push(y);
            n /= 2;
        }
        let last = acts.last().expect("four conv stages");
        let c = self.config.channels[3];
        let pooled: Vec<f64> = (0..c).map(|k| last[k * n * n..(k + 1) * n * n].iter().sum::<f64>() / (n * n) as f64).collect();
        let (shape, shape_norm) = l2_normalize(&self.layers.shape_head.forward(p, &pooled));
        let (view, view_norm) = l2_normalize(&self.layers.view_head.forward(p, &pooled));
        Ok((input, acts, pooled, LatentCodes { shape, view }, shape_norm, view_norm))
    }

    pub fn encode(&self, sketch: &SilhouetteImage) -> Result<LatentCodes> {
        self.check_finite()?;
        Ok(self.encode_cached(sketch)?.3)
    }

    fn decode_raw(&self, z_s: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = &self.params;
        let hidden = relu(self.layers.dec_hidden.forward(p, z_s));
        let mut raw: Vec<Vec3> = Vec::new();
        for (k, stage) in self.layers.dec_stages.iter().enumerate() {
            let out = stage.forward(p, &hidden);
            if k > 0 {
                raw = self.sphere.upsample(DECODER_LEVELS[k - 1], &raw);
            } else {
                raw = vec![[0.0; 3]; out.len() / 3];
            }
            for (r, o) in raw.iter_mut().zip(out.chunks_exact(3)) {
                for j in 0..3 {
                    r[j] += o[j];
                }
            }
        }
        (hidden, raw.into_iter().flatten().collect())
    }

    fn offset_vertices(&self, raw: &[f64]) -> Vec<Vec3> {
        let d = self.config.max_offset;
        self.sphere
            .mesh
            .vertices
            .iter()
            .zip(raw.chunks_exact(3))
            .map(|(t, r)| [0, 1, 2].map(|j| t[j] + d * r[j].tanh()))
            .collect()
    }

    fn check_code(z: &[f64], dim: usize, what: &str) -> Result<()> {
        if z.len() != dim {
            return Err(invalid(format!("{what} code has dimension {}, expected {dim}", z.len())));
        }
        let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-5 {
            return Err(invalid(format!("{what} code norm {n} is not 1")));
        }
        Ok(())
    }

    /// Template icosphere deformed by the accumulated, tanh-bounded offsets.
    pub fn decode(&self, z_s: &[f64]) -> Result<Mesh> {
        Self::check_code(z_s, self.config.latent_dim, "shape")?;
        self.check_finite()?;
        let (_, raw) = self.decode_raw(z_s);
        Ok(Mesh { vertices: self.offset_vertices(&raw), faces: self.sphere.mesh.faces.clone(), colors: None })
    }

    fn view_raw(&self, z_v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = &self.params;
        let h = relu(self.layers.view_fc1.forward(p, z_v));
        let o = self.layers.view_fc2.forward(p, &h);
        (h, o)
    }

    /// Azimuth is `atan2(o1, 1 + o0)`, so a zero output means azimuth 0; elevation is
    /// `90 tanh(o2)`. Distance is the canonical one.
    fn pose_from_output(o: &[f64]) -> CameraPose {
        let azimuth = o[1].atan2(1.0 + o[0]).to_degrees();
        let elevation = (90.0 * o[2].tanh()).clamp(-90.0, 90.0);
        CameraPose { azimuth: crate::render::wrap_degrees(azimuth), elevation, distance: CANONICAL_DISTANCE }
    }

    pub fn predict_viewpoint(&self, z_v: &[f64]) -> Result<CameraPose> {
        Self::check_code(z_v, self.config.latent_dim, "view")?;
        self.check_finite()?;
        Ok(Self::pose_from_output(&self.view_raw(z_v).1))
    }

    /// Encode, decode and predict the viewpoint in one pass.
    pub fn infer(&self, sketch: &SilhouetteImage) -> Result<(Mesh, CameraPose)> {
        let f = self.forward(sketch)?;
        let mesh = Mesh { vertices: f.vertices, faces: self.sphere.mesh.faces.clone(), colors: None };
        Ok((mesh, f.pose))
    }

    pub fn forward(&self, sketch: &SilhouetteImage) -> Result<Forward> {
        self.check_finite()?;
        self.forward_trusted(sketch)
    }

    /// [`Model::forward`] without the weight scan; training checks the loss instead.
    pub(crate) fn forward_trusted(&self, sketch: &SilhouetteImage) -> Result<Forward> {
        let (input, acts, pooled, codes, shape_norm, view_norm) = self.encode_cached(sketch)?;
        let (hidden, raw) = self.decode_raw(&codes.shape);
        let vertices = self.offset_vertices(&raw);
        let (view_hidden, view_out) = self.view_raw(&codes.view);
        let pose = Self::pose_from_output(&view_out);
        Ok(Forward { input, acts, pooled, shape_norm, view_norm, codes, hidden, raw, view_hidden, view_out, vertices, pose })
    }

    /// Accumulates into `grad` the parameter gradient of a loss whose derivatives are `g_vertices`
    /// (per decoded vertex) and `g_pose` (azimuth and elevation, per degree).
    pub fn backward(&self, f: &Forward, g_vertices: &[Vec3], g_pose: [f64; 2], grad: &mut [f64]) {
        let p = &self.params;
        let ly = &self.layers;
        let d = self.config.max_offset;

        // Decoder.
        let mut g_raw: Vec<Vec3> = g_vertices
            .iter()
            .zip(f.raw.chunks_exact(3))
            .map(|(g, r)| [0, 1, 2].map(|j| g[j] * d * (1.0 - r[j].tanh().powi(2))))
            .collect();
        let mut g_hidden = vec![0.0; f.hidden.len()];
        for k in (0..3).rev() {
            let flat: Vec<f64> = g_raw.iter().flatten().copied().collect();
            let gh = ly.dec_stages[k].backward(p, &f.hidden, &flat, grad);
            g_hidden.iter_mut().zip(gh).for_each(|(a, b)| *a += b);
            if k > 0 {
                g_raw = self.sphere.upsample_adjoint(DECODER_LEVELS[k - 1], &g_raw);
            }
        }
        let g_hidden = relu_backward(&f.hidden, g_hidden);
        let g_zs = ly.dec_hidden.backward(p, &f.codes.shape, &g_hidden, grad);

        // Viewpoint head.
        let o = &f.view_out;
        let (c, s) = (1.0 + o[0], o[1]);
        let r2 = (c * c + s * s).max(1e-12);
        let deg = 180.0 / std::f64::consts::PI;
        let t = o[2].tanh();
        let g_out = [-s / r2 * deg * g_pose[0], c / r2 * deg * g_pose[0], 90.0 * (1.0 - t * t) * g_pose[1]];
        let g_vh = relu_backward(&f.view_hidden, ly.view_fc2.backward(p, &f.view_hidden, &g_out, grad));
        let g_zv = ly.view_fc1.backward(p, &f.codes.view, &g_vh, grad);

        // Encoder.
        let g_us = l2_normalize_backward(&f.codes.shape, f.shape_norm, &g_zs);
        let g_uv = l2_normalize_backward(&f.codes.view, f.view_norm, &g_zv);
        let mut g_pool = ly.shape_head.backward(p, &f.pooled, &g_us, grad);
        for (a, b) in g_pool.iter_mut().zip(ly.view_head.backward(p, &f.pooled, &g_uv, grad)) {
            *a += b;
        }
        let n_last = self.config.input_resolution >> 4;
        let area = (n_last * n_last) as f64;
        let mut g_act: Vec<f64> = g_pool.iter().flat_map(|g| std::iter::repeat_n(g / area, n_last * n_last)).collect();
        let mut n = n_last * 2;
        for k in (0..4).rev() {
            g_act = relu_backward(&f.acts[k], g_act);
            let x = if k == 0 { &f.input } else { &f.acts[k - 1] };
            let g_in = ly.convs[k].backward(p, x, n, &g_act, grad);
            if k == 0 {
                break;
            }
            g_act = g_in;
            n *= 2;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom;
    use crate::render::SilhouetteImage;
    use rand::Rng;

    fn small() -> ModelConfig {
        ModelConfig { input_resolution: 16, channels: [2, 3, 4, 5], latent_dim: 6, decoder_hidden: 7, view_hidden: 5, max_offset: 0.75 }
    }

    fn blob(n: usize, cx: f64, cy: f64, r: f64) -> SilhouetteImage {
        let values = (0..n * n)
            .map(|i| {
                let (x, y) = ((i % n) as f64 - cx, (i / n) as f64 - cy);
                ((x * x + y * y).sqrt() <= r) as u8 as f64
            })
            .collect();
        SilhouetteImage { width: n, height: n, values }
    }

    #[test]
    fn zero_weights_give_template_and_canonical_pose() {
        let m = Model::zeros(ModelConfig::default()).unwrap();
        let mut z = vec![0.0; 128];
        z[3] = 1.0;
        let mesh = m.decode(&z).unwrap();
        assert_eq!(mesh.vertices.len(), 642);
        assert_eq!(mesh, *m.template());
        let pose = m.predict_viewpoint(&z).unwrap();
        assert_eq!((pose.azimuth, pose.elevation, pose.distance), (0.0, 0.0, CANONICAL_DISTANCE));
    }

    #[test]
    fn codes_are_unit_and_distinguish_sketches() {
        let m = Model::new(ModelConfig::default(), 4).unwrap();
        let a = m.encode(&blob(64, 30.0, 30.0, 12.0)).unwrap();
        let b = m.encode(&blob(64, 20.0, 36.0, 18.0)).unwrap();
        for z in [&a.shape, &a.view, &b.shape, &b.view] {
            assert!((z.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-5);
        }
        let cos: f64 = a.shape.iter().zip(&b.shape).map(|(x, y)| x * y).sum();
        assert!(cos < 1.0 - 1e-6);
        assert_eq!(m.encode(&blob(64, 30.0, 30.0, 12.0)).unwrap(), a);
        assert!(m.encode(&blob(32, 10.0, 10.0, 5.0)).is_err());
    }

    #[test]
    fn random_weights_keep_topology_and_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = Model::new(small(), 1).unwrap();
        for p in &mut m.params {
            *p = rng.random_range(-3.0..3.0);
        }
        for k in 0..5 {
            let (mesh, pose) = m.infer(&blob(16, 7.0 + k as f64, 8.0, 4.0)).unwrap();
            assert_eq!(mesh.faces, m.template().faces);
            mesh.validate().unwrap();
            for (v, t) in mesh.vertices.iter().zip(&m.template().vertices) {
                assert!((0..3).all(|j| (v[j] - t[j]).abs() <= 0.75));
            }
            assert!(CameraPose::new(pose.azimuth, pose.elevation, pose.distance).is_ok());
            assert!((0.0..360.0).contains(&pose.azimuth));
        }
    }

    #[test]
    fn nan_weights_are_rejected() {
        let mut m = Model::new(small(), 1).unwrap();
        m.params[0] = f64::NAN;
        assert!(matches!(m.infer(&blob(16, 8.0, 8.0, 4.0)), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut m = Model::new(small(), 3).unwrap();
        // Larger decoder weights so every stage contributes.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for p in &mut m.params {
            *p += rng.random_range(-0.2..0.2);
        }
        let sketch = blob(16, 6.0, 9.0, 5.0);
        let cv: Vec<Vec3> = (0..642).map(|_| [0, 1, 2].map(|_| rng.random_range(-1.0..1.0))).collect();
        let cp = [0.3, -0.7];
        let loss = |m: &Model| {
            let f = m.forward(&sketch).unwrap();
            let mut a = f.pose.azimuth;
            if a > 180.0 {
                a -= 360.0;
            }
            f.vertices.iter().zip(&cv).map(|(v, c)| geom::dot(*v, *c)).sum::<f64>() + cp[0] * a + cp[1] * f.pose.elevation
        };
        let f = m.forward(&sketch).unwrap();
        assert!(f.pose.azimuth < 90.0 || f.pose.azimuth > 270.0, "keep away from the wrap");
        let mut grad = vec![0.0; m.params.len()];
        m.backward(&f, &cv, cp, &mut grad);
        let h = 1e-6;
        let mut bad = 0;
        let mut checked = 0;
        for i in (0..m.params.len()).step_by(3) {
            let orig = m.params[i];
            m.params[i] = orig + h;
            let a = loss(&m);
            m.params[i] = orig - h;
            let b = loss(&m);
            m.params[i] = orig;
            let fd = (a - b) / (2.0 * h);
            checked += 1;
            if (fd - grad[i]).abs() > 1e-4 * (1.0 + fd.abs()) {
                bad += 1;
            }
        }
        // ReLU kinks can flip under the probe for a handful of coordinates.
        assert!(bad * 100 <= checked, "{bad} of {checked} mismatched");
    }
}
