//! On-disk artifact store: content-addressed blobs plus an append-only job log.
//!
//! Layout: `blobs/<sha256 hex>` and `jobs.jsonl`, one full job record per line. Replaying the
//! log keeps the last record per job id.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use uuid::Uuid;

pub const LOG_FILE: &str = "jobs.jsonl";
pub const BLOB_DIR: &str = "blobs";
pub const INTERRUPTED: &str = "interrupted";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Fit,
    Infer,
    Stylize,
    Pipeline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    /// Allowed moves: queued to running, running to done or failed, and queued straight to
    /// failed when a job cannot start.
    pub fn can_become(self, next: JobState) -> bool {
        matches!(
            (self, next),
            (JobState::Queued, JobState::Running)
                | (JobState::Queued, JobState::Failed)
                | (JobState::Running, JobState::Done)
                | (JobState::Running, JobState::Failed)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseInput {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JobInputs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sketch_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mesh_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pose: Option<PoseInput>,
    /// Id of the JSON job configuration blob.
    pub config_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobOutputs {
    pub mesh_id: String,
    pub preview_ids: Vec<String>,
    pub trace_id: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub created_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub started_ms: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: Uuid,
    pub kind: JobKind,
    pub state: JobState,
    pub inputs: JobInputs,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outputs: Option<JobOutputs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub timings: Timings,
}

pub fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn valid_id(id: &str) -> bool {
    id.len() == 64 && id.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
}

/// Jobs in first-seen order, keyed by id.
#[derive(Debug, Clone, Default)]
pub struct JobTable {
    pub order: Vec<Uuid>,
    pub jobs: HashMap<Uuid, Job>,
}

impl JobTable {
    pub fn get(&self, id: &Uuid) -> Option<&Job> {
        self.jobs.get(id)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Job> {
        self.order.iter().filter_map(|id| self.jobs.get(id))
    }

    fn upsert(&mut self, job: Job) {
        if !self.jobs.contains_key(&job.id) {
            self.order.push(job.id);
        }
        self.jobs.insert(job.id, job);
    }
}

/// Reads `jobs.jsonl` under `root`. Unparseable lines are skipped with a warning; jobs still
/// running when the log ends are marked failed with [`INTERRUPTED`].
pub fn replay_store(root: &Path) -> io::Result<JobTable> {
    let mut table = JobTable::default();
    let path = root.join(LOG_FILE);
    let file = match File::open(&path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(table),
        Err(e) => return Err(e),
    };
    for (n, line) in BufReader::new(file).split(b'\n').enumerate() {
        let line = line?;
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        match serde_json::from_slice::<Job>(&line) {
            Ok(job) => table.upsert(job),
            Err(e) => log::warn!("{}: skipping line {}: {e}", path.display(), n + 1),
        }
    }
    for job in table.jobs.values_mut() {
        if job.state == JobState::Running {
            job.state = JobState::Failed;
            job.error = Some(INTERRUPTED.into());
        }
    }
    Ok(table)
}

pub struct ArtifactStore {
    root: PathBuf,
    log: Mutex<File>,
}

impl ArtifactStore {
    /// Creates the directories when missing.
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join(BLOB_DIR))?;
        let path = root.join(LOG_FILE);
        // A crash can leave a partial last line; start appends on a fresh line.
        let needs_newline = match fs::read(&path) {
            Ok(bytes) => bytes.last().is_some_and(|&b| b != b'\n'),
            Err(_) => false,
        };
        let mut log = OpenOptions::new().create(true).append(true).open(&path)?;
        if needs_newline {
            log.write_all(b"\n")?;
        }
        Ok(Self { root, log: Mutex::new(log) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn replay(&self) -> io::Result<JobTable> {
        replay_store(&self.root)
    }

    /// Appends one job record and syncs it to disk.
    pub fn append(&self, job: &Job) -> io::Result<()> {
        let mut line = serde_json::to_vec(job)?;
        line.push(b'\n');
        let mut log = self.log.lock().unwrap_or_else(|e| e.into_inner());
        log.write_all(&line)?;
        log.sync_data()
    }

    fn blob_path(&self, id: &str) -> PathBuf {
        self.root.join(BLOB_DIR).join(id)
    }

    /// Stores `bytes` under their SHA-256 and returns the id. Existing blobs are left alone.
    pub fn put(&self, bytes: &[u8]) -> io::Result<String> {
        let id = sha256_hex(bytes);
        let path = self.blob_path(&id);
        if !path.exists() {
            let tmp = self.root.join(BLOB_DIR).join(format!(".{id}.{}", Uuid::new_v4()));
            fs::write(&tmp, bytes)?;
            fs::rename(&tmp, &path)?;
        }
        Ok(id)
    }

    /// `None` for malformed or unknown ids.
    pub fn get(&self, id: &str) -> io::Result<Option<Vec<u8>>> {
        if !valid_id(id) {
            return Ok(None);
        }
        match fs::read(self.blob_path(id)) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn contains(&self, id: &str) -> bool {
        valid_id(id) && self.blob_path(id).is_file()
    }
}
