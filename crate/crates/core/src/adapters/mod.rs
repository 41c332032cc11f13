//! Uniform model-query contract and its backends.

mod http;
mod ocr;
mod ratelimit;
mod replay;
mod runner;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forge::TrialRecord;
use crate::raster::{GrayImage, PngColor, RasterError};

pub use http::{chat_request_body, parse_chat_reply, HttpBackend, ModelEndpointConfig};
pub use ocr::{answer as ocr_answer, template_ocr, OcrToken};
pub use ratelimit::TokenBucket;
pub use replay::{ReplayBackend, ReplayEntry};
pub use runner::{load_results, run_trials, RunOptions, RunRecord, RunSummary, RunnerError};

/// One question put to a backend.
#[derive(Debug, Clone)]
pub struct Probe<'a> {
    pub trial: &'a TrialRecord,
    pub image: &'a GrayImage,
}

impl Probe<'_> {
    pub fn png(&self) -> Result<Vec<u8>, RasterError> {
        self.image.to_png(PngColor::Rgb)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub text: String,
    pub latency_ms: u64,
    pub attempt_count: u32,
    pub backend_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AskError {
    /// No answer within the deadline on any attempt, including refused or
    /// unroutable connections.
    #[error("timed out after {attempts} attempts: {detail}")]
    Timeout { attempts: u32, detail: String },
    #[error("HTTP {code} after {attempts} attempts")]
    HttpStatus { code: u16, attempts: u32 },
    #[error("malformed response: {detail}")]
    MalformedResponse { detail: String },
    #[error("auth token variable {var} is not set")]
    AuthMissing { var: String },
    #[error("invalid probe: {detail}")]
    InvalidProbe { detail: String },
}

/// A model that answers probes. Implementations must be safe to share
/// between worker threads.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn ask(&self, probe: &Probe<'_>) -> Result<Reply, AskError>;
}

fn check_prompt(probe: &Probe<'_>) -> Result<(), AskError> {
    if probe.trial.prompt.trim().is_empty() {
        return Err(AskError::InvalidProbe { detail: "empty prompt".into() });
    }
    Ok(())
}

/// Answers with the trial's ground truth, read from the record rather than the
/// image. Validates plumbing, not perception.
#[derive(Debug, Default, Clone)]
pub struct PerfectOracle;

impl Backend for PerfectOracle {
    fn id(&self) -> &str {
        "oracle"
    }

    fn ask(&self, probe: &Probe<'_>) -> Result<Reply, AskError> {
        check_prompt(probe)?;
        Ok(Reply { text: probe.trial.ground_truth.clone(), latency_ms: 0, attempt_count: 1, backend_id: self.id().into() })
    }
}

/// Reads the stimulus with [`template_ocr`].
#[derive(Debug, Default, Clone)]
pub struct TemplateOcr;

impl Backend for TemplateOcr {
    fn id(&self) -> &str {
        "template_ocr"
    }

    fn ask(&self, probe: &Probe<'_>) -> Result<Reply, AskError> {
        check_prompt(probe)?;
        let text = ocr::answer(&template_ocr(probe.image), &probe.trial.prompt);
        Ok(Reply { text, latency_ms: 0, attempt_count: 1, backend_id: self.id().into() })
    }
}
