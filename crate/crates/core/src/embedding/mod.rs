//! Joint image/text embeddings compared by cosine similarity.

mod remote;
mod toy;

pub use remote::{RemoteProvider, DEFAULT_MAX_IN_FLIGHT, DEFAULT_TIMEOUT_MS, TIMEOUT_ENV};
pub use toy::{toy_provider, ToyProvider, TOY_DIMENSION};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geom::Vec3;
use crate::render::RgbImage;

/// Unit-norm tolerance for vectors handed to losses.
pub const UNIT_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Scales `values` to unit length; the zero vector is rejected.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let n = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(invalid("cannot normalize a zero or non-finite embedding"));
        }
        Ok(Self { values: values.into_iter().map(|v| v / n).collect() })
    }

    /// Wraps `values` without rescaling; they must already be unit length.
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        let n = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(invalid(format!("embedding norm {n} is not 1")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0)
    }
}

/// Pull-back of an embedding gradient to image pixels.
pub type ImageVjp = Box<dyn Fn(&[f64]) -> Vec<Vec3> + Send + Sync>;

/// A language-image embedding model.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;

    fn supports_image_gradient(&self) -> bool;

    fn embed_text(&self, prompt: &str) -> Result<EmbeddingVector>;

    fn embed_image(&self, image: &RgbImage) -> Result<EmbeddingVector>;

    /// Embedding plus the vector-Jacobian product with respect to pixels, when supported.
    fn embed_image_with_grad(&self, image: &RgbImage) -> Result<(EmbeddingVector, Option<ImageVjp>)> {
        Ok((self.embed_image(image)?, None))
    }
}

pub(crate) fn check_prompt(prompt: &str) -> Result<()> {
    if prompt.trim().is_empty() {
        return Err(invalid("empty prompt"));
    }
    Ok(())
}
