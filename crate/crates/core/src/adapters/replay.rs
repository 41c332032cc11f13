use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::http::parse_chat_reply;
use super::{check_prompt, AskError, Backend, Probe, Reply};

/// One HTTP attempt as written to a replay log. The image is identified by
/// digest so logs stay small.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub trial_id: String,
    pub attempt: u32,
    pub image_sha256: String,
    pub status: Option<u16>,
    pub response_body: Option<String>,
    pub latency_ms: u64,
    pub transport_error: Option<String>,
}

impl ReplayEntry {
    pub fn new(trial_id: &str, attempt: u32, image_sha256: &str, status: Option<u16>, response_body: Option<String>, latency_ms: u64, transport_error: Option<String>) -> Self {
        ReplayEntry { trial_id: trial_id.into(), attempt, image_sha256: image_sha256.into(), status, response_body, latency_ms, transport_error }
    }
}

/// Answers from a recorded replay log instead of the network, reproducing
/// each trial's final outcome.
#[derive(Debug)]
pub struct ReplayBackend {
    id: String,
    last: HashMap<String, ReplayEntry>,
}

impl ReplayBackend {
    pub fn load(path: &Path) -> std::io::Result<ReplayBackend> {
        let mut last: HashMap<String, ReplayEntry> = HashMap::new();
        for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ReplayEntry = serde_json::from_str(&line)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{} line {}: {e}", path.display(), i + 1)))?;
            match last.get(&entry.trial_id) {
                Some(prev) if prev.attempt > entry.attempt => {}
                _ => {
                    last.insert(entry.trial_id.clone(), entry);
                }
            }
        }
        Ok(ReplayBackend { id: format!("replay:{}", path.display()), last })
    }

    pub fn len(&self) -> usize {
        self.last.len()
    }

    pub fn is_empty(&self) -> bool {
        self.last.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn ask(&self, probe: &Probe<'_>) -> Result<Reply, AskError> {
        check_prompt(probe)?;
        let e = self
            .last
            .get(&probe.trial.trial_id)
            .ok_or_else(|| AskError::InvalidProbe { detail: format!("trial {} not in replay log", probe.trial.trial_id) })?;
        match (e.status, &e.response_body) {
            (Some(200..=299), Some(body)) => {
                let text = parse_chat_reply(body)?;
                Ok(Reply { text, latency_ms: e.latency_ms, attempt_count: e.attempt, backend_id: self.id.clone() })
            }
            (Some(code), _) => Err(AskError::HttpStatus { code, attempts: e.attempt }),
            (None, _) => Err(AskError::Timeout { attempts: e.attempt, detail: e.transport_error.clone().unwrap_or_default() }),
        }
    }
}
