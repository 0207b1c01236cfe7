//! The fit, infer, stylize and pipeline operations with their output artifacts.

use serde_json::json;
use sketchforge::embedding::EmbeddingProvider;
use sketchforge::fit::{fit_with_progress, FitTrace};
use sketchforge::mesh::obj::export_obj;
use sketchforge::model::Checkpoint;
use sketchforge::render::CameraPose;
use sketchforge::sketch::{ingest_sketch, Sketch, DEFAULT_THRESHOLD};
use sketchforge::stylize::{stylize_with_progress, turntable, StyleTrace};
use sketchforge::train::model_input;
use sketchforge::Mesh;

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::store::PoseInput;

/// Progress callback: iterations done and total.
pub type Progress<'a> = &'a mut dyn FnMut(usize, usize);

pub struct Artifacts {
    pub mesh: Mesh,
    pub obj: Vec<u8>,
    /// Turntable strip PNG.
    pub preview: Vec<u8>,
    pub trace: serde_json::Value,
}

impl Artifacts {
    fn new(mesh: Mesh, trace: serde_json::Value, cfg: &Config) -> CliResult<Self> {
        let preview = turntable(&mesh, cfg.preview_size)?.to_png()?;
        Ok(Self { obj: export_obj(&mesh), mesh, preview, trace })
    }

    pub fn trace_bytes(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(&self.trace).unwrap_or_default()
    }
}

pub fn read_sketch(png: &[u8]) -> CliResult<Sketch> {
    Ok(ingest_sketch(png, DEFAULT_THRESHOLD)?)
}

pub fn pose_from(input: Option<PoseInput>) -> CliResult<Option<CameraPose>> {
    input.map(|p| CameraPose::at(p.azimuth_deg, p.elevation_deg).map_err(CliError::from)).transpose()
}

fn fit_stage(
    sketch: &Sketch,
    pose: Option<CameraPose>,
    prompt: Option<&str>,
    cfg: &Config,
    provider: &dyn EmbeddingProvider,
    progress: Progress,
) -> CliResult<(Mesh, FitTrace)> {
    let mut fit_cfg = cfg.fit.clone();
    if let Some(p) = prompt {
        fit_cfg.prompt = Some(p.to_string());
    }
    let r = fit_with_progress(sketch, pose, &fit_cfg, Some(provider), progress)?;
    Ok((r.mesh, r.trace))
}

fn style_stage(
    mesh: &Mesh,
    prompt: &str,
    cfg: &Config,
    provider: &dyn EmbeddingProvider,
    progress: Progress,
) -> CliResult<(Mesh, StyleTrace)> {
    let style_cfg = sketchforge::stylize::StyleConfig { prompt: prompt.to_string(), ..cfg.style.clone() };
    let r = stylize_with_progress(mesh, &style_cfg, provider, progress)?;
    Ok((r.mesh, r.trace))
}

pub fn run_fit(
    sketch: &Sketch,
    pose: Option<CameraPose>,
    prompt: Option<&str>,
    cfg: &Config,
    provider: &dyn EmbeddingProvider,
    progress: Progress,
) -> CliResult<Artifacts> {
    let (mesh, trace) = fit_stage(sketch, pose, prompt, cfg, provider, progress)?;
    Artifacts::new(mesh, json!({ "fit": trace }), cfg)
}

pub fn run_infer(sketch: &Sketch, checkpoint: &Checkpoint, cfg: &Config) -> CliResult<Artifacts> {
    let input = model_input(&sketch.occupancy, &checkpoint.model.config)?;
    let (mesh, pose) = checkpoint.model.infer(&input)?;
    let trace = json!({ "pose": { "azimuth_deg": pose.azimuth, "elevation_deg": pose.elevation } });
    Artifacts::new(mesh, trace, cfg)
}

pub fn run_stylize(mesh: &Mesh, prompt: &str, cfg: &Config, provider: &dyn EmbeddingProvider, progress: Progress) -> CliResult<Artifacts> {
    let (mesh, trace) = style_stage(mesh, prompt, cfg, provider, progress)?;
    Artifacts::new(mesh, json!({ "style": trace }), cfg)
}

/// Fit followed by stylization; progress counts both stages.
pub fn run_pipeline(
    sketch: &Sketch,
    pose: Option<CameraPose>,
    prompt: &str,
    cfg: &Config,
    provider: &dyn EmbeddingProvider,
    progress: Progress,
) -> CliResult<Artifacts> {
    let total = cfg.fit.iterations + cfg.style.iterations;
    let fit_iters = cfg.fit.iterations;
    let (fitted, fit_trace) = fit_stage(sketch, pose, Some(prompt), cfg, provider, &mut |d, _| progress(d, total))?;
    let (mesh, style_trace) = style_stage(&fitted, prompt, cfg, provider, &mut |d, _| progress(fit_iters + d, total))?;
    Artifacts::new(mesh, json!({ "fit": fit_trace, "style": style_trace }), cfg)
}
