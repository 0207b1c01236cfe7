//! Deterministic stand-in embedding model.
//!
//! Images: area-weighted 8x8 and 4x4 luminance grids and the mean color are concatenated with a
//! constant bias feature, multiplied by a fixed Gaussian projection and normalized. Text: the
//! normalized mean of per-token vectors. Color words embed like a solid image of that color;
//! category words are built to have cosine 0.6 with a flat-grey render of their exemplar shape;
//! any other token gets a pseudo-random vector derived from its hash.

use std::collections::HashMap;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::{check_prompt, EmbeddingProvider, EmbeddingVector, ImageVjp};
use crate::error::{invalid, Result};
use crate::geom::Vec3;
use crate::procedural::{exemplar, EXEMPLAR_WORDS};
use crate::render::{luminance, render_color, CameraPose, RenderConfig, RgbImage, FLAT_GREY};

pub const TOY_DIMENSION: usize = 64;
const MIN_SIZE: usize = 16;
const PROJECTION_SEED: u64 = 0x5EED_0E3B;
const FINE: usize = 8;
const COARSE: usize = 4;
const COLOR_OFFSET: usize = FINE * FINE + COARSE * COARSE;
const COLOR_WEIGHT: f64 = 3.0;
const BIAS: f64 = 0.05;
const FEATURES: usize = COLOR_OFFSET + 4;
/// Cosine between a category word and its exemplar render.
const CATEGORY_ALIGNMENT: f64 = 0.6;
const STOPWORDS: [&str; 4] = ["a", "an", "the", "of"];
const CALIBRATION_SIZE: usize = 64;

const COLORS: [(&str, Vec3); 12] = [
    ("red", [0.9, 0.1, 0.1]),
    ("orange", [1.0, 0.55, 0.1]),
    ("yellow", [0.95, 0.9, 0.15]),
    ("green", [0.15, 0.7, 0.2]),
    ("blue", [0.1, 0.2, 0.9]),
    ("purple", [0.5, 0.15, 0.65]),
    ("pink", [1.0, 0.6, 0.75]),
    ("brown", [0.45, 0.3, 0.15]),
    ("black", [0.05, 0.05, 0.05]),
    ("white", [0.95, 0.95, 0.95]),
    ("grey", [FLAT_GREY; 3]),
    ("gray", [FLAT_GREY; 3]),
];

pub struct ToyProvider {
    /// Row-major `TOY_DIMENSION x FEATURES`.
    projection: Vec<f64>,
    words: HashMap<&'static str, Vec<f64>>,
}

/// Shared toy provider, built on first use.
pub fn toy_provider() -> &'static ToyProvider {
    static PROVIDER: OnceLock<ToyProvider> = OnceLock::new();
    PROVIDER.get_or_init(ToyProvider::new)
}

/// Pixel-to-bin overlap weights along one axis: for every pixel, `(bin, fraction of bin)`.
fn axis_weights(size: usize, bins: usize) -> Vec<Vec<(usize, f64)>> {
    let bin_len = size as f64 / bins as f64;
    (0..size)
        .map(|i| {
            let (p0, p1) = (i as f64, i as f64 + 1.0);
            let first = (p0 / bin_len).floor() as usize;
            let last = (((p1 / bin_len).ceil() as usize).max(first + 1)).min(bins);
            (first..last)
                .filter_map(|b| {
                    let overlap = p1.min((b + 1) as f64 * bin_len) - p0.max(b as f64 * bin_len);
                    (overlap > 0.0).then_some((b, overlap / bin_len))
                })
                .collect()
        })
        .collect()
}

struct Features {
    values: Vec<f64>,
    fine: Vec<Vec<(usize, f64)>>,
    coarse: Vec<Vec<(usize, f64)>>,
}

fn features(image: &RgbImage) -> Result<Features> {
    let n = image.width;
    if n != image.height || n < MIN_SIZE {
        return Err(invalid(format!(
            "toy embedding needs a square image of at least {MIN_SIZE} pixels, got {}x{}",
            image.width, image.height
        )));
    }
    let fine = axis_weights(n, FINE);
    let coarse = axis_weights(n, COARSE);
    let mut f = vec![0.0; FEATURES];
    let mut mean = [0.0; 3];
    for y in 0..n {
        for x in 0..n {
            let p = image.pixels[y * n + x];
            let l = luminance(p) - 0.5;
            for &(by, wy) in &fine[y] {
                for &(bx, wx) in &fine[x] {
                    f[by * FINE + bx] += l * wx * wy;
                }
            }
            for &(by, wy) in &coarse[y] {
                for &(bx, wx) in &coarse[x] {
                    f[FINE * FINE + by * COARSE + bx] += l * wx * wy;
                }
            }
            for k in 0..3 {
                mean[k] += p[k];
            }
        }
    }
    let inv = 1.0 / (n * n) as f64;
    for k in 0..3 {
        f[COLOR_OFFSET + k] = COLOR_WEIGHT * (mean[k] * inv - 0.5);
    }
    f[COLOR_OFFSET + 3] = BIAS;
    Ok(Features { values: f, fine, coarse })
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= n;
    }
    n
}

fn hashed_vector(token: &str) -> Vec<f64> {
    let digest = Sha256::digest(token.as_bytes());
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(seed);
    let mut v: Vec<f64> = (0..TOY_DIMENSION).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalize(&mut v);
    v
}

impl ToyProvider {
    fn new() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
        let projection = (0..TOY_DIMENSION * FEATURES).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut provider = Self { projection, words: HashMap::new() };
        let mut words = HashMap::new();
        for (name, rgb) in COLORS {
            let img = RgbImage::filled(MIN_SIZE, MIN_SIZE, rgb);
            words.insert(name, provider.image_vector(&img).expect("valid size").0);
        }
        let cfg = RenderConfig::square(CALIBRATION_SIZE);
        for name in EXEMPLAR_WORDS {
            let mesh = exemplar(name).expect("exemplar word").with_uniform_color([FLAT_GREY; 3]);
            let img = render_color(&mesh, &CameraPose::canonical(), &cfg).expect("exemplar render");
            let anchor = provider.image_vector(&img).expect("valid size").0;
            // Mix the render embedding with a word-specific direction orthogonal to it.
            let mut h = hashed_vector(name);
            let d: f64 = h.iter().zip(&anchor).map(|(a, b)| a * b).sum();
            for (x, a) in h.iter_mut().zip(&anchor) {
                *x -= d * a;
            }
            normalize(&mut h);
            let s = (1.0 - CATEGORY_ALIGNMENT * CATEGORY_ALIGNMENT).sqrt();
            let v = anchor.iter().zip(&h).map(|(a, b)| CATEGORY_ALIGNMENT * a + s * b).collect();
            words.insert(name, v);
        }
        provider.words = words;
        provider
    }

    /// Unit embedding, the feature vector and the pre-normalization length.
    fn image_vector(&self, image: &RgbImage) -> Result<(Vec<f64>, Features, f64)> {
        let feats = features(image)?;
        let mut e: Vec<f64> = self
            .projection
            .chunks_exact(FEATURES)
            .map(|row| row.iter().zip(&feats.values).map(|(a, b)| a * b).sum())
            .collect();
        let len = normalize(&mut e);
        Ok((e, feats, len))
    }

    fn token_vector(&self, token: &str) -> Vec<f64> {
        match self.words.get(token) {
            Some(v) => v.clone(),
            None => hashed_vector(token),
        }
    }

    /// Tokens that carry meaning: lowercase words minus articles.
    pub fn tokens(prompt: &str) -> Vec<String> {
        prompt
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .filter(|t| !STOPWORDS.contains(&t.as_str()))
            .collect()
    }

    /// Whether `token` has a calibrated vector rather than a hashed one.
    pub fn knows(&self, token: &str) -> bool {
        self.words.contains_key(token)
    }
}

impl EmbeddingProvider for ToyProvider {
    fn dimension(&self) -> usize {
        TOY_DIMENSION
    }

    fn supports_image_gradient(&self) -> bool {
        true
    }

    fn embed_text(&self, prompt: &str) -> Result<EmbeddingVector> {
        check_prompt(prompt)?;
        let tokens = Self::tokens(prompt);
        if tokens.is_empty() {
            return EmbeddingVector::normalized(hashed_vector(&prompt.trim().to_lowercase()));
        }
        let mut acc = vec![0.0; TOY_DIMENSION];
        for t in &tokens {
            for (a, v) in acc.iter_mut().zip(self.token_vector(t)) {
                *a += v;
            }
        }
        EmbeddingVector::normalized(acc)
    }

    fn embed_image(&self, image: &RgbImage) -> Result<EmbeddingVector> {
        EmbeddingVector::normalized(self.image_vector(image)?.0)
    }

    fn embed_image_with_grad(&self, image: &RgbImage) -> Result<(EmbeddingVector, Option<ImageVjp>)> {
        let (e, feats, len) = self.image_vector(image)?;
        let n = image.width;
        let projection = self.projection.clone();
        let unit = e.clone();
        let vjp = move |g: &[f64]| -> Vec<Vec3> {
            // e = Pf / |Pf|  =>  df = P^T (g - e (e . g)) / |Pf|
            let eg: f64 = unit.iter().zip(g).map(|(a, b)| a * b).sum();
            let mut g_f = vec![0.0; FEATURES];
            for (r, row) in projection.chunks_exact(FEATURES).enumerate() {
                let c = (g[r] - unit[r] * eg) / len;
                for (gf, p) in g_f.iter_mut().zip(row) {
                    *gf += c * p;
                }
            }
            let inv = COLOR_WEIGHT / (n * n) as f64;
            let color = [g_f[COLOR_OFFSET] * inv, g_f[COLOR_OFFSET + 1] * inv, g_f[COLOR_OFFSET + 2] * inv];
            let mut out = Vec::with_capacity(n * n);
            for y in 0..n {
                for x in 0..n {
                    let mut gl = 0.0;
                    for &(by, wy) in &feats.fine[y] {
                        for &(bx, wx) in &feats.fine[x] {
                            gl += g_f[by * FINE + bx] * wx * wy;
                        }
                    }
                    for &(by, wy) in &feats.coarse[y] {
                        for &(bx, wx) in &feats.coarse[x] {
                            gl += g_f[FINE * FINE + by * COARSE + bx] * wx * wy;
                        }
                    }
                    out.push([0.299 * gl + color[0], 0.587 * gl + color[1], 0.114 * gl + color[2]]);
                }
            }
            out
        };
        Ok((EmbeddingVector::normalized(e)?, Some(Box::new(vjp))))
    }
}
