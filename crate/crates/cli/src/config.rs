//! Settings shared by the CLI and the service: a JSON file with one section per stage.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sketchforge::dataset::DatasetConfig;
use sketchforge::embedding::{toy_provider, EmbeddingProvider, RemoteProvider};
use sketchforge::fit::FitConfig;
use sketchforge::render::RenderConfig;
use sketchforge::stylize::StyleConfig;
use sketchforge::train::{EvalConfig, TrainConfig};

use crate::error::{CliError, CliResult};

pub const STORE_ENV: &str = "SKETCHFORGE_STORE";
pub const WORKERS_ENV: &str = "SKETCHFORGE_WORKERS";
pub const EMBED_URL_ENV: &str = "SKETCHFORGE_EMBED_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub fit: FitConfig,
    pub style: StyleConfig,
    pub render: RenderConfig,
    pub train: TrainConfig,
    pub dataset: DatasetConfig,
    pub eval: EvalConfig,
    /// Turntable frame size in pixels.
    pub preview_size: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            style: StyleConfig::default(),
            render: RenderConfig::square(128),
            train: TrainConfig::default(),
            dataset: DatasetConfig::default(),
            eval: EvalConfig::default(),
            preview_size: 96,
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let bytes = std::fs::read(p).map_err(|e| CliError::User(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_json(&bytes)
            }
        }
    }

    pub fn from_json(bytes: &[u8]) -> CliResult<Self> {
        serde_json::from_slice(bytes).map_err(|e| CliError::User(format!("bad config: {e}")))
    }

    /// Overlays the keys present in `patch` onto this configuration.
    pub fn merged(&self, patch: &serde_json::Value) -> CliResult<Self> {
        let mut base = serde_json::to_value(self).map_err(CliError::internal)?;
        merge(&mut base, patch);
        serde_json::from_value(base).map_err(|e| CliError::User(format!("bad config: {e}")))
    }
}

fn merge(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

pub enum Provider {
    Toy,
    Remote(RemoteProvider),
}

impl Provider {
    /// Remote provider when `SKETCHFORGE_EMBED_URL` is set, else the built-in toy provider.
    pub fn from_env() -> CliResult<Self> {
        match std::env::var(EMBED_URL_ENV) {
            Ok(url) if !url.trim().is_empty() => RemoteProvider::connect(&url)
                .map(Provider::Remote)
                .map_err(|e| CliError::Internal(format!("embedding service {url}: {e}"))),
            _ => Ok(Provider::Toy),
        }
    }

    pub fn get(&self) -> &dyn EmbeddingProvider {
        match self {
            Provider::Toy => toy_provider(),
            Provider::Remote(r) => r,
        }
    }
}
