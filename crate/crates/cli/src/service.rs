//! Job table, submission and the worker pool behind the HTTP API.

use std::collections::HashMap;
use std::io;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sketchforge::mesh::obj::import_obj;
use sketchforge::model::Checkpoint;
use uuid::Uuid;

use crate::config::{Config, Provider};
use crate::error::{CliError, CliResult};
use crate::ops::{self, Artifacts};
use crate::store::{now_ms, ArtifactStore, Job, JobInputs, JobKind, JobOutputs, JobState, JobTable, PoseInput, Timings};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitRequest {
    pub kind: JobKind,
    #[serde(default)]
    pub sketch_png_base64: Option<String>,
    #[serde(default)]
    pub mesh_id: Option<String>,
    #[serde(default)]
    pub prompt: Option<String>,
    #[serde(default)]
    pub pose: Option<PoseInput>,
    #[serde(default)]
    pub config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Progress {
    pub done: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobStatus {
    pub id: Uuid,
    pub kind: JobKind,
    pub state: JobState,
    pub progress: Progress,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outputs: Option<JobOutputs>,
    pub timings: Timings,
}

pub struct ServiceOptions {
    pub store: PathBuf,
    pub workers: usize,
    pub config: Config,
    pub checkpoint: Option<Checkpoint>,
    pub provider: Provider,
}

pub struct Service {
    pub store: ArtifactStore,
    pub config: Config,
    table: RwLock<JobTable>,
    progress: Mutex<HashMap<Uuid, Progress>>,
    queue: Mutex<Option<Sender<Uuid>>>,
    stopping: AtomicBool,
    checkpoint: Option<Checkpoint>,
    provider: Provider,
}

pub struct Workers {
    handles: Vec<JoinHandle<()>>,
}

impl Service {
    /// Opens the store, replays the log and starts `workers` threads. Jobs found running are
    /// recorded as interrupted; queued jobs are picked up again.
    pub fn start(opts: ServiceOptions) -> io::Result<(Arc<Service>, Workers)> {
        let store = ArtifactStore::open(&opts.store)?;
        let table = store.replay()?;
        let (tx, rx) = channel();
        let service = Arc::new(Service {
            store,
            config: opts.config,
            table: RwLock::new(JobTable::default()),
            progress: Mutex::new(HashMap::new()),
            queue: Mutex::new(Some(tx.clone())),
            stopping: AtomicBool::new(false),
            checkpoint: opts.checkpoint,
            provider: opts.provider,
        });
        for job in table.iter() {
            // Replay already turned running jobs into failed ones; persist that verdict once.
            if job.error.as_deref() == Some(crate::store::INTERRUPTED) && job.timings.finished_ms.is_none() {
                let mut j = job.clone();
                j.timings.finished_ms = Some(now_ms());
                service.store.append(&j)?;
                service.insert(j);
            } else {
                service.insert(job.clone());
            }
            if job.state == JobState::Queued {
                let _ = tx.send(job.id);
            }
        }
        let rx = Arc::new(Mutex::new(rx));
        let handles = (0..opts.workers.max(1))
            .map(|i| {
                let (svc, rx) = (service.clone(), rx.clone());
                std::thread::Builder::new().name(format!("worker-{i}")).spawn(move || worker_loop(svc, rx))
            })
            .collect::<io::Result<Vec<_>>>()?;
        Ok((service, Workers { handles }))
    }

    fn insert(&self, job: Job) {
        let mut t = self.table.write().unwrap_or_else(|e| e.into_inner());
        if !t.jobs.contains_key(&job.id) {
            t.order.push(job.id);
        }
        t.jobs.insert(job.id, job);
    }

    pub fn job(&self, id: &Uuid) -> Option<Job> {
        self.table.read().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }

    pub fn jobs(&self) -> Vec<Job> {
        self.table.read().unwrap_or_else(|e| e.into_inner()).iter().cloned().collect()
    }

    pub fn status(&self, id: &Uuid) -> Option<JobStatus> {
        let job = self.job(id)?;
        let mut progress = self.progress.lock().unwrap_or_else(|e| e.into_inner()).get(id).copied().unwrap_or_default();
        if job.state == JobState::Done {
            progress.done = progress.total;
        }
        Some(JobStatus {
            id: job.id,
            kind: job.kind,
            state: job.state,
            progress,
            error: job.error,
            outputs: job.outputs,
            timings: job.timings,
        })
    }

    /// Validates the request, stores its inputs and queues the job.
    pub fn submit(&self, req: SubmitRequest) -> CliResult<Uuid> {
        let config = match &req.config {
            Some(patch) => self.config.merged(patch)?,
            None => self.config.clone(),
        };
        let prompt = req.prompt.as_deref().map(str::trim).filter(|p| !p.is_empty()).map(str::to_string);
        let needs_sketch = matches!(req.kind, JobKind::Fit | JobKind::Infer | JobKind::Pipeline);
        let needs_prompt = matches!(req.kind, JobKind::Stylize | JobKind::Pipeline);
        if needs_prompt && prompt.is_none() {
            return Err(CliError::User(format!("{:?} jobs need a prompt", req.kind).to_lowercase()));
        }
        if req.kind == JobKind::Infer && self.checkpoint.is_none() {
            return Err(CliError::User("the service was started without a checkpoint; infer is unavailable".into()));
        }
        ops::pose_from(req.pose)?;
        config.fit.validate()?;
        if needs_prompt {
            sketchforge::stylize::StyleConfig { prompt: prompt.clone().unwrap_or_default(), ..config.style.clone() }.validate()?;
        }
        if config.preview_size == 0 {
            return Err(CliError::User("preview size must be positive".into()));
        }

        let mut inputs = JobInputs::default();
        if needs_sketch {
            let b64 = req.sketch_png_base64.as_deref().ok_or_else(|| CliError::User("sketch_png_base64 is required".into()))?;
            let png = base64::engine::general_purpose::STANDARD
                .decode(b64.trim())
                .map_err(|e| CliError::User(format!("sketch is not valid base64: {e}")))?;
            ops::read_sketch(&png)?;
            inputs.sketch_id = Some(self.store.put(&png)?);
        }
        if req.kind == JobKind::Stylize {
            let id = req.mesh_id.as_deref().ok_or_else(|| CliError::User("mesh_id is required".into()))?;
            let bytes = self.store.get(id)?.ok_or_else(|| CliError::User(format!("unknown mesh {id}")))?;
            import_obj(&bytes)?;
            inputs.mesh_id = Some(id.to_string());
        }
        inputs.prompt = prompt;
        inputs.pose = req.pose;
        inputs.config_id = self.store.put(&serde_json::to_vec(&config).map_err(CliError::internal)?)?;

        let job = Job {
            id: Uuid::new_v4(),
            kind: req.kind,
            state: JobState::Queued,
            inputs,
            outputs: None,
            error: None,
            timings: Timings { created_ms: now_ms(), started_ms: None, finished_ms: None },
        };
        let total = match job.kind {
            JobKind::Fit => config.fit.iterations,
            JobKind::Infer => 1,
            JobKind::Stylize => config.style.iterations,
            JobKind::Pipeline => config.fit.iterations + config.style.iterations,
        };
        self.progress.lock().unwrap_or_else(|e| e.into_inner()).insert(job.id, Progress { done: 0, total });
        self.store.append(&job)?;
        let id = job.id;
        self.insert(job);
        let queue = self.queue.lock().unwrap_or_else(|e| e.into_inner());
        match queue.as_ref() {
            Some(tx) if tx.send(id).is_ok() => Ok(id),
            _ => Err(CliError::Internal("service is shutting down".into())),
        }
    }

    /// Applies `f` to the stored job, checks the state change and logs the new record.
    fn transition(&self, id: &Uuid, f: impl FnOnce(&mut Job)) -> io::Result<Job> {
        let mut t = self.table.write().unwrap_or_else(|e| e.into_inner());
        let job = t.jobs.get_mut(id).ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, "unknown job"))?;
        let mut next = job.clone();
        f(&mut next);
        if next.state != job.state && !job.state.can_become(next.state) {
            return Err(io::Error::other(format!("illegal transition {:?} -> {:?}", job.state, next.state)));
        }
        self.store.append(&next)?;
        *job = next.clone();
        Ok(next)
    }

    fn set_progress(&self, id: &Uuid, done: usize, total: usize) {
        self.progress.lock().unwrap_or_else(|e| e.into_inner()).insert(*id, Progress { done, total });
    }

    fn execute(&self, job: &Job) -> CliResult<JobOutputs> {
        let missing = |what: &str| CliError::Internal(format!("input {what} missing from the store"));
        let config_bytes = self.store.get(&job.inputs.config_id)?.ok_or_else(|| missing("config"))?;
        let config = Config::from_json(&config_bytes)?;
        let sketch = match &job.inputs.sketch_id {
            Some(id) => Some(ops::read_sketch(&self.store.get(id)?.ok_or_else(|| missing("sketch"))?)?),
            None => None,
        };
        let pose = ops::pose_from(job.inputs.pose)?;
        let prompt = job.inputs.prompt.as_deref();
        let provider = self.provider.get();
        let id = job.id;
        let mut progress = |d: usize, t: usize| self.set_progress(&id, d, t);
        let need_sketch = || sketch.as_ref().ok_or_else(|| missing("sketch"));
        let need_prompt = || prompt.ok_or_else(|| missing("prompt"));
        let artifacts: Artifacts = match job.kind {
            JobKind::Fit => ops::run_fit(need_sketch()?, pose, prompt, &config, provider, &mut progress)?,
            JobKind::Infer => {
                let ck = self.checkpoint.as_ref().ok_or_else(|| CliError::User("no checkpoint loaded".into()))?;
                ops::run_infer(need_sketch()?, ck, &config)?
            }
            JobKind::Stylize => {
                let mesh_id = job.inputs.mesh_id.as_deref().ok_or_else(|| missing("mesh"))?;
                let mesh = import_obj(&self.store.get(mesh_id)?.ok_or_else(|| missing("mesh"))?)?;
                ops::run_stylize(&mesh, need_prompt()?, &config, provider, &mut progress)?
            }
            JobKind::Pipeline => ops::run_pipeline(need_sketch()?, pose, need_prompt()?, &config, provider, &mut progress)?,
        };
        Ok(JobOutputs {
            mesh_id: self.store.put(&artifacts.obj)?,
            preview_ids: vec![self.store.put(&artifacts.preview)?],
            trace_id: self.store.put(&artifacts.trace_bytes())?,
        })
    }

    fn run_job(&self, id: Uuid) {
        let job = match self.transition(&id, |j| {
            j.state = JobState::Running;
            j.timings.started_ms = Some(now_ms());
        }) {
            Ok(j) => j,
            Err(e) => {
                log::error!("job {id} cannot start: {e}");
                return;
            }
        };
        let result = catch_unwind(AssertUnwindSafe(|| self.execute(&job)))
            .unwrap_or_else(|_| Err(CliError::Internal("job panicked".into())));
        let finished = now_ms();
        let outcome = self.transition(&id, |j| {
            j.timings.finished_ms = Some(finished);
            match result {
                Ok(outputs) => {
                    j.state = JobState::Done;
                    j.outputs = Some(outputs);
                }
                Err(e) => {
                    j.state = JobState::Failed;
                    let msg = e.to_string();
                    j.error = Some(if msg.is_empty() { "job failed".into() } else { msg });
                }
            }
        });
        match outcome {
            Ok(j) => log::info!("job {id} {:?}", j.state),
            Err(e) => log::error!("job {id}: cannot record result: {e}"),
        }
    }

    /// Stops accepting jobs; workers finish the job in hand and exit. Jobs still queued stay
    /// queued in the log and run after the next start.
    pub fn close(&self) {
        self.stopping.store(true, Ordering::SeqCst);
        self.queue.lock().unwrap_or_else(|e| e.into_inner()).take();
    }
}

fn worker_loop(service: Arc<Service>, rx: Arc<Mutex<Receiver<Uuid>>>) {
    loop {
        let next = rx.lock().unwrap_or_else(|e| e.into_inner()).recv();
        match next {
            Ok(_) if service.stopping.load(Ordering::SeqCst) => return,
            Ok(id) => service.run_job(id),
            Err(_) => return,
        }
    }
}

impl Workers {
    /// Waits for the workers; call after [`Service::close`].
    pub fn join(self) {
        for h in self.handles {
            let _ = h.join();
        }
    }
}
