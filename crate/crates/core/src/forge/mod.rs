//! Probe-suite generation: parameter grids, deterministic trials, manifests.

mod manifest;
pub mod rng;
pub mod spec;
mod suites;
mod trial;

use thiserror::Error;

use crate::patch::PatchError;
use crate::raster::{RasterError, Rect};

pub use manifest::{read_manifest, write_suite, ManifestError, MANIFEST_FILE};
pub use rng::{derive_seed, draw_number, hash_str};
pub use spec::{parse_spec_document, SpecError, SpecOverrides, SuiteKind, SuiteSpec, ParamGrid, PROMPT_READ, PROMPT_VARIABLE};
pub use suites::{build_boundary_cut_suite, build_distractor_suite, build_location_suite, build_quality_suite, build_size_suite, build_suite};
pub use trial::{render_trial, CellParams, Placement, TrialParams, TrialRecord};

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error("suite builder for {expected} got a {got} spec")]
    WrongKind { expected: SuiteKind, got: SuiteKind },
    #[error("{suite} spec has a parameter grid of the wrong type")]
    WrongGrid { suite: SuiteKind },
    #[error("could not place distractor {index} of {count} after {attempts} attempts")]
    PlacementFailure { index: u32, count: u32, attempts: u32 },
    #[error("text {text:?} ({w}x{h} px) cannot be enlarged {scale}x within a {canvas_w}x{canvas_h} canvas")]
    TextLargerThanCrop { text: String, w: u32, h: u32, scale: f64, canvas_w: u32, canvas_h: u32 },
    #[error("text box {bbox:?} does not fit a {width}x{height} canvas")]
    TextTooLarge { bbox: Rect, width: u32, height: u32 },
    #[error("location suite needs {needed} free cells for distractors, grid has {available}")]
    NotEnoughCells { needed: u32, available: u32 },
    #[error("duplicate trial id {0}")]
    DuplicateTrialId(String),
}
