//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use sketchforge::dataset::{generate_dataset, load_dataset, split};
use sketchforge::losses::{pyramid, silhouette_objective};
use sketchforge::mesh::obj::import_obj;
use sketchforge::mesh::make_icosphere;
use sketchforge::model::Checkpoint;
use sketchforge::procedural::Category;
use sketchforge::render::{grad_check, render_color, render_silhouette, CameraPose, RenderConfig, FLAT_GREY};
use sketchforge::stylize::turntable;
use sketchforge::train::{evaluate, Trainer};

use crate::config::{Config, Provider, STORE_ENV, WORKERS_ENV};
use crate::error::{read_input, write_output, CliError, CliResult};
use crate::ops;
use crate::service::{Service, ServiceOptions};
use crate::store::PoseInput;

#[derive(Debug, Parser)]
#[command(name = "sketchforge", version, about = "Sketch-to-mesh modelling, training and stylization")]
pub struct Cli {
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print one JSON object to stdout instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// More log output on stderr (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Procedural dataset tools.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Train the sketch encoder and mesh decoder on a dataset directory.
    Train(TrainArgs),
    /// Predict a mesh and viewpoint from a sketch with a trained checkpoint.
    Infer(InferArgs),
    /// Deform the template to match one sketch.
    Fit(FitArgs),
    /// Color and displace a mesh to match a text prompt.
    Stylize(StylizeArgs),
    /// Fit followed by stylization.
    Pipeline(PipelineArgs),
    /// Render a mesh to PNG.
    Render(RenderArgs),
    /// Compare renderer gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run the HTTP job service.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Generate instances into a directory.
    Gen(DatasetGenArgs),
}

#[derive(Debug, Args)]
pub struct DatasetGenArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated category names.
    #[arg(long, value_delimiter = ',')]
    pub categories: Option<Vec<String>>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Checkpoint written after training (and every `--save-every` epochs).
    #[arg(long)]
    pub out: PathBuf,
    /// Instances kept out of training, spread evenly through the dataset.
    #[arg(long, default_value_t = 0)]
    pub holdout: usize,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub save_every: usize,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub sketch: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Turntable preview PNG.
    #[arg(long)]
    pub preview: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PoseArgs {
    /// Camera azimuth of the sketch in degrees (default: canonical view).
    #[arg(long, requires = "elevation", allow_hyphen_values = true)]
    pub azimuth: Option<f64>,
    #[arg(long, requires = "azimuth", allow_hyphen_values = true)]
    pub elevation: Option<f64>,
}

impl PoseArgs {
    fn input(&self) -> Option<PoseInput> {
        Some(PoseInput { azimuth_deg: self.azimuth?, elevation_deg: self.elevation? })
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub sketch: PathBuf,
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub pose: PoseArgs,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Loss trace as JSON.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub preview: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StylizeArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub prompt: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Turntable strip PNG.
    #[arg(long)]
    pub turntable: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub sketch: PathBuf,
    #[arg(long)]
    pub prompt: String,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub pose: PoseArgs,
    #[arg(long)]
    pub fit_iterations: Option<usize>,
    #[arg(long)]
    pub style_iterations: Option<usize>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub turntable: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30.0, allow_hyphen_values = true)]
    pub azimuth: f64,
    #[arg(long, default_value_t = 20.0, allow_hyphen_values = true)]
    pub elevation: f64,
    #[arg(long)]
    pub size: Option<usize>,
    /// Soft silhouette instead of the color render.
    #[arg(long)]
    pub silhouette: bool,
    /// Eight-view strip instead of a single view.
    #[arg(long, conflicts_with = "silhouette")]
    pub turntable: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    pub subdivisions: u32,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub tolerance: f64,
    /// Required fraction of compared coordinates within tolerance.
    #[arg(long, default_value_t = 0.99)]
    pub min_fraction: f64,
    /// Weight of the smoothness terms.
    #[arg(long, default_value_t = 0.1)]
    pub lambda_r: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Score only the N instances that `train --holdout N` kept out.
    #[arg(long, default_value_t = 0)]
    pub holdout: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
    #[arg(long, env = STORE_ENV, default_value = "sketchforge-store")]
    pub store: PathBuf,
    /// Worker threads (default: available cores).
    #[arg(long, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    /// Checkpoint used by infer jobs.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let json_mode = cli.json;
    match dispatch(cli) {
        Ok(report) => {
            if json_mode {
                println!("{report}");
            } else if let Some(text) = human(&report) {
                println!("{text}");
            }
            0
        }
        Err(e) => {
            if json_mode {
                println!("{}", json!({ "error": e.message(), "exit_code": e.exit_code() }));
            }
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// `key: value` lines for the text mode.
fn human(report: &Value) -> Option<String> {
    let obj = report.as_object()?;
    if obj.is_empty() {
        return None;
    }
    Some(
        obj.iter()
            .map(|(k, v)| match v {
                Value::String(s) => format!("{k}: {s}"),
                other => format!("{k}: {other}"),
            })
            .collect::<Vec<_>>()
            .join("\n"),
    )
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn dispatch(cli: Cli) -> CliResult<Value> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Dataset { command: DatasetCommand::Gen(a) } => {
            if let Some(c) = a.categories {
                cfg.dataset.categories = c.iter().map(|s| s.trim().parse::<Category>()).collect::<Result<_, _>>()?;
            }
            if let Some(n) = a.count {
                cfg.dataset.count_per_category = n;
            }
            if let Some(r) = a.resolution {
                cfg.dataset.resolution = r;
            }
            if let Some(s) = a.seed {
                cfg.dataset.seed = s;
            }
            let instances = generate_dataset(&cfg.dataset, &a.out)?;
            Ok(json!({ "instances": instances.len(), "out": path_str(&a.out) }))
        }
        Command::Train(a) => train(cfg, a),
        Command::Infer(a) => {
            let sketch = ops::read_sketch(&read_input(&a.sketch)?)?;
            let ck = load_checkpoint(&a.checkpoint)?;
            let art = ops::run_infer(&sketch, &ck, &cfg)?;
            write_output(&a.out, &art.obj)?;
            if let Some(p) = &a.preview {
                write_output(p, &art.preview)?;
            }
            Ok(json!({
                "out": path_str(&a.out),
                "azimuth_deg": art.trace["pose"]["azimuth_deg"],
                "elevation_deg": art.trace["pose"]["elevation_deg"],
            }))
        }
        Command::Fit(a) => {
            if let Some(n) = a.iterations {
                cfg.fit.iterations = n;
            }
            if let Some(s) = a.seed {
                cfg.fit.seed = s;
            }
            let provider = Provider::from_env()?;
            let sketch = ops::read_sketch(&read_input(&a.sketch)?)?;
            let pose = ops::pose_from(a.pose.input())?;
            let art = ops::run_fit(&sketch, pose, a.prompt.as_deref(), &cfg, provider.get(), &mut |_, _| {})?;
            write_artifacts(&art, &a.out, a.trace.as_deref(), a.preview.as_deref())?;
            let last = art.trace["fit"]["steps"].as_array().and_then(|s| s.last()).cloned().unwrap_or(Value::Null);
            Ok(json!({ "out": path_str(&a.out), "iterations": cfg.fit.iterations, "final": last }))
        }
        Command::Stylize(a) => {
            if let Some(n) = a.iterations {
                cfg.style.iterations = n;
            }
            if let Some(s) = a.seed {
                cfg.style.seed = s;
            }
            let provider = Provider::from_env()?;
            let mesh = import_obj(&read_input(&a.mesh)?)?;
            let art = ops::run_stylize(&mesh, &a.prompt, &cfg, provider.get(), &mut |_, _| {})?;
            write_artifacts(&art, &a.out, a.trace.as_deref(), a.turntable.as_deref())?;
            let last = art.trace["style"]["steps"].as_array().and_then(|s| s.last()).cloned().unwrap_or(Value::Null);
            Ok(json!({ "out": path_str(&a.out), "iterations": cfg.style.iterations, "final": last }))
        }
        Command::Pipeline(a) => {
            if let Some(n) = a.fit_iterations {
                cfg.fit.iterations = n;
            }
            if let Some(n) = a.style_iterations {
                cfg.style.iterations = n;
            }
            let provider = Provider::from_env()?;
            let sketch = ops::read_sketch(&read_input(&a.sketch)?)?;
            let pose = ops::pose_from(a.pose.input())?;
            let art = ops::run_pipeline(&sketch, pose, &a.prompt, &cfg, provider.get(), &mut |_, _| {})?;
            write_artifacts(&art, &a.out, a.trace.as_deref(), a.turntable.as_deref())?;
            Ok(json!({ "out": path_str(&a.out) }))
        }
        Command::Render(a) => {
            let mesh = import_obj(&read_input(&a.mesh)?)?;
            let size = a.size.unwrap_or(cfg.render.width);
            let rcfg = RenderConfig { width: size, height: size, ..cfg.render };
            let png = if a.turntable {
                turntable(&mesh, size)?.to_png()?
            } else {
                let pose = CameraPose::at(a.azimuth, a.elevation)?;
                if a.silhouette {
                    render_silhouette(&mesh, &pose, &rcfg)?.to_png()?
                } else {
                    let colored = if mesh.colors.is_some() { mesh } else { mesh.with_uniform_color([FLAT_GREY; 3]) };
                    render_color(&colored, &pose, &rcfg)?.to_png()?
                }
            };
            write_output(&a.out, &png)?;
            Ok(json!({ "out": path_str(&a.out) }))
        }
        Command::Gradcheck(a) => gradcheck(a),
        Command::Eval(a) => {
            let ck = load_checkpoint(&a.checkpoint)?;
            let all = load_dataset(&a.dataset)?;
            let set = if a.holdout > 0 { split(all, a.holdout).1 } else { all };
            let provider = Provider::from_env()?;
            let r = evaluate(&ck.model, &set, provider.get(), &cfg.eval)?;
            Ok(serde_json::to_value(r).map_err(CliError::internal)?)
        }
        Command::Serve(a) => serve(cfg, a),
    }
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Ok(Checkpoint::from_bytes(&read_input(path)?)?)
}

fn write_artifacts(art: &ops::Artifacts, out: &Path, trace: Option<&Path>, preview: Option<&Path>) -> CliResult<()> {
    write_output(out, &art.obj)?;
    if let Some(p) = trace {
        write_output(p, &art.trace_bytes())?;
    }
    if let Some(p) = preview {
        write_output(p, &art.preview)?;
    }
    Ok(())
}

fn train(mut cfg: Config, a: TrainArgs) -> CliResult<Value> {
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let all = load_dataset(&a.dataset)?;
    let instances = if a.holdout > 0 {
        if a.holdout >= all.len() {
            return Err(CliError::User(format!("holdout {} leaves no training data", a.holdout)));
        }
        split(all, a.holdout).0
    } else {
        all
    };
    let provider = Provider::from_env()?;
    let mut trainer = match &a.resume {
        Some(p) => {
            let mut ck = load_checkpoint(p)?;
            if let Some(e) = a.epochs {
                ck.train.epochs = e;
            }
            Trainer::resume(ck, &instances, Some(provider.get()))?
        }
        None => Trainer::new(&instances, cfg.train.clone(), Some(provider.get()))?,
    };
    while !trainer.finished() {
        let m = trainer.run_epoch()?;
        log::info!(
            "epoch {} lr {:.2e} total {:.5} ms {:.4} r {:.4} clip {:.4} v {:.1}",
            m.epoch, m.lr, m.total, m.ms, m.r, m.clip, m.v
        );
        if a.save_every > 0 && m.epoch % a.save_every == 0 {
            trainer.checkpoint().save(&a.out)?;
        }
    }
    trainer.checkpoint().save(&a.out)?;
    let last = trainer.metrics.last().copied();
    Ok(json!({ "out": path_str(&a.out), "epochs": trainer.epoch, "final": last }))
}

fn gradcheck(a: GradcheckArgs) -> CliResult<Value> {
    let mesh = make_icosphere(a.subdivisions)?;
    let pose = CameraPose::at(35.0, 20.0)?;
    let cfg = RenderConfig::square(a.size);
    let weights = sketchforge::losses::LossWeights::default();
    let target_mesh = Category::Table.exemplar();
    let target = render_silhouette(&target_mesh, &pose, &cfg)?.thresholded(0.5);
    let target = pyramid(&target, weights.pyramid_depth())?;
    let report = grad_check(
        |m, p, c| silhouette_objective(m, p, c, &target, &weights.lambda_scales, a.lambda_r),
        &mesh,
        &pose,
        &cfg,
        a.tolerance,
    )?;
    let pass = report.passes(a.min_fraction);
    let out = json!({
        "pass": pass,
        "fraction_passing": report.fraction_passing,
        "checked": report.checked,
        "max_rel_err": report.max_rel_err,
        "min_fraction": a.min_fraction,
    });
    if pass {
        Ok(out)
    } else {
        Err(CliError::User(format!(
            "gradient check failed: {:.4} of {} coordinates within {}",
            report.fraction_passing, report.checked, a.tolerance
        )))
    }
}

fn serve(cfg: Config, a: ServeArgs) -> CliResult<Value> {
    let workers = a.workers.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let checkpoint = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let provider = Provider::from_env()?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::internal)?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&a.bind)
            .await
            .map_err(|e| CliError::Internal(format!("cannot bind {}: {e}", a.bind)))?;
        let (service, pool) = Service::start(ServiceOptions { store: a.store.clone(), workers, config: cfg, checkpoint, provider })?;
        let addr = listener.local_addr()?;
        eprintln!("listening on http://{addr} (store {}, {workers} workers)", a.store.display());
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        crate::server::serve(listener, service, pool, shutdown).await?;
        Ok(json!({}))
    })
}
