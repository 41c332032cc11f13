use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AskError, Backend, Probe};
use crate::forge::{render_trial, TrialRecord};
use crate::raster::GrayImage;

/// Outcome of one trial against one backend: a reply or an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub trial_id: String,
    pub backend_id: String,
    pub reply: Option<String>,
    pub error: Option<AskError>,
    pub latency_ms: u64,
    pub attempt_count: u32,
}

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path} line {line}: {source}")]
    Parse { path: PathBuf, line: usize, source: serde_json::Error },
    #[error("parallelism must be at least 1")]
    ZeroParallelism,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub results: PathBuf,
    /// Directory the manifest's relative image paths resolve against. Trials
    /// whose PNG is missing are re-rendered from their record.
    pub image_root: Option<PathBuf>,
    pub parallelism: usize,
    /// Keep existing results and skip their trial ids.
    pub resume: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub attempted: usize,
    pub skipped: usize,
    pub errored: usize,
}

pub fn load_results(path: &Path) -> Result<Vec<RunRecord>, RunnerError> {
    let file = File::open(path).map_err(|source| RunnerError::Io { path: path.into(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| RunnerError::Io { path: path.into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| RunnerError::Parse { path: path.into(), line: i + 1, source })?);
    }
    Ok(out)
}

fn stimulus(rec: &TrialRecord, root: Option<&Path>) -> Result<GrayImage, AskError> {
    if let Some(root) = root {
        if let Ok(bytes) = fs::read(root.join(&rec.image)) {
            return GrayImage::from_png(&bytes).map_err(|e| AskError::InvalidProbe { detail: e.to_string() });
        }
    }
    render_trial(rec).map_err(|e| AskError::InvalidProbe { detail: e.to_string() })
}

/// Ask `backend` every trial not yet answered, with at most `parallelism`
/// questions in flight. Each result is appended and flushed as it arrives.
pub fn run_trials(records: &[TrialRecord], backend: &dyn Backend, opts: &RunOptions) -> Result<RunSummary, RunnerError> {
    if opts.parallelism == 0 {
        return Err(RunnerError::ZeroParallelism);
    }
    let io_err = |source| RunnerError::Io { path: opts.results.clone(), source };
    let done: HashSet<String> = if opts.resume && opts.results.exists() {
        load_results(&opts.results)?.into_iter().map(|r| r.trial_id).collect()
    } else {
        HashSet::new()
    };
    if let Some(parent) = opts.results.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(opts.resume)
        .truncate(!opts.resume)
        .open(&opts.results)
        .map_err(io_err)?;
    let todo: Vec<&TrialRecord> = records.iter().filter(|r| !done.contains(&r.trial_id)).collect();
    let writer = Mutex::new(file);
    let next = AtomicUsize::new(0);
    let errored = AtomicUsize::new(0);
    let failure: Mutex<Option<io::Error>> = Mutex::new(None);
    let root = opts.image_root.as_deref();
    std::thread::scope(|s| {
        for _ in 0..opts.parallelism.min(todo.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(rec) = todo.get(i) else { break };
                let outcome = stimulus(rec, root).and_then(|image| backend.ask(&Probe { trial: rec, image: &image }));
                let run = match outcome {
                    Ok(reply) => RunRecord {
                        trial_id: rec.trial_id.clone(),
                        backend_id: reply.backend_id,
                        reply: Some(reply.text),
                        error: None,
                        latency_ms: reply.latency_ms,
                        attempt_count: reply.attempt_count,
                    },
                    Err(e) => {
                        errored.fetch_add(1, Ordering::SeqCst);
                        let attempts = match &e {
                            AskError::Timeout { attempts, .. } | AskError::HttpStatus { attempts, .. } => *attempts,
                            _ => 1,
                        };
                        RunRecord { trial_id: rec.trial_id.clone(), backend_id: backend.id().into(), reply: None, error: Some(e), latency_ms: 0, attempt_count: attempts }
                    }
                };
                let line = serde_json::to_string(&run).expect("run records serialise");
                let mut w = writer.lock().expect("results writer poisoned");
                if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
                    failure.lock().expect("failure slot poisoned").get_or_insert(e);
                    next.store(usize::MAX / 2, Ordering::SeqCst);
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().expect("failure slot poisoned") {
        return Err(io_err(e));
    }
    Ok(RunSummary { attempted: todo.len(), skipped: records.len() - todo.len(), errored: errored.into_inner() })
}
