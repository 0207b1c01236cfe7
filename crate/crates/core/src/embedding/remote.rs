//! HTTP client for an external embedding service.
//!
//! Protocol: `POST {endpoint}/embed/text` with `{"text": ...}` and `POST {endpoint}/embed/image`
//! with `{"png_base64": ...}`; both answer `{"dim": D, "values": [...]}`.

use std::collections::HashMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::Engine as _;
use serde::Deserialize;
use serde_json::json;

use super::{check_prompt, EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};
use crate::render::RgbImage;

pub const TIMEOUT_ENV: &str = "SKETCHFORGE_EMBED_TIMEOUT_MS";
pub const DEFAULT_TIMEOUT_MS: u64 = 10_000;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Deserialize)]
struct Reply {
    dim: usize,
    values: Vec<f64>,
}

pub struct RemoteProvider {
    endpoint: String,
    agent: ureq::Agent,
    dimension: usize,
    slots: Mutex<usize>,
    freed: Condvar,
    text_cache: Mutex<HashMap<String, EmbeddingVector>>,
}

struct Slot<'a>(&'a RemoteProvider);

impl Drop for Slot<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.freed.notify_one();
    }
}

impl RemoteProvider {
    /// Connects to `endpoint`, probing it once to learn the dimension. The timeout comes from
    /// `SKETCHFORGE_EMBED_TIMEOUT_MS` when set.
    pub fn connect(endpoint: &str) -> Result<Self> {
        let timeout = std::env::var(TIMEOUT_ENV)
            .ok()
            .and_then(|v| v.parse::<u64>().ok())
            .unwrap_or(DEFAULT_TIMEOUT_MS);
        Self::with_options(endpoint, Duration::from_millis(timeout), DEFAULT_MAX_IN_FLIGHT)
    }

    pub fn with_options(endpoint: &str, timeout: Duration, max_in_flight: usize) -> Result<Self> {
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        let mut provider = Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            agent,
            dimension: 0,
            slots: Mutex::new(max_in_flight.max(1)),
            freed: Condvar::new(),
            text_cache: Mutex::new(HashMap::new()),
        };
        provider.dimension = provider.request("text", json!({ "text": "probe" }))?.dimension();
        Ok(provider)
    }

    fn acquire(&self) -> Slot<'_> {
        let mut free = self.slots.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.freed.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Slot(self)
    }

    fn request(&self, kind: &str, body: serde_json::Value) -> Result<EmbeddingVector> {
        let _slot = self.acquire();
        let url = format!("{}/embed/{kind}", self.endpoint);
        let reply: Reply = self
            .agent
            .post(&url)
            .send_json(&body)
            .map_err(|e| Error::Transport(format!("{url}: {e}")))?
            .body_mut()
            .read_json()
            .map_err(|e| Error::Transport(format!("{url}: malformed response: {e}")))?;
        if reply.values.len() != reply.dim || reply.dim == 0 {
            return Err(Error::Transport(format!(
                "{url}: declared dimension {} but sent {} values",
                reply.dim,
                reply.values.len()
            )));
        }
        if self.dimension != 0 && reply.dim != self.dimension {
            return Err(Error::Transport(format!("{url}: dimension changed from {} to {}", self.dimension, reply.dim)));
        }
        let norm = reply.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > super::UNIT_TOLERANCE {
            log::warn!("{url}: renormalizing embedding of norm {norm}");
        }
        EmbeddingVector::normalized(reply.values).map_err(|e| Error::Transport(format!("{url}: {e}")))
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn supports_image_gradient(&self) -> bool {
        false
    }

    fn embed_text(&self, prompt: &str) -> Result<EmbeddingVector> {
        check_prompt(prompt)?;
        if let Some(v) = self.text_cache.lock().unwrap_or_else(|e| e.into_inner()).get(prompt) {
            return Ok(v.clone());
        }
        let v = self.request("text", json!({ "text": prompt }))?;
        self.text_cache.lock().unwrap_or_else(|e| e.into_inner()).insert(prompt.to_string(), v.clone());
        Ok(v)
    }

    fn embed_image(&self, image: &RgbImage) -> Result<EmbeddingVector> {
        let png = image.to_png()?;
        let encoded = base64::engine::general_purpose::STANDARD.encode(png);
        self.request("image", json!({ "png_base64": encoded }))
    }
}
