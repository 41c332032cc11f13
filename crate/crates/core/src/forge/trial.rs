use serde::{Deserialize, Serialize};

use super::{ForgeError, SuiteKind};
use crate::patch::Axis;
use crate::raster::{self, GrayImage, Rect, ScaleFactor};

/// One piece of text drawn on a stimulus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    /// Variable name (`a` for the target) in labelled suites.
    pub label: Option<String>,
    /// Exactly what is drawn, including any `x=` prefix.
    pub text: String,
    pub bbox: Rect,
}

/// Per-cell parameters, tagged by suite kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CellParams {
    Quality {
        sampling_rate: u32,
        render_rate: u32,
        digits: u32,
        number_index: u32,
    },
    Size {
        scale: f64,
        base_rate: u32,
        digits: u32,
        number_index: u32,
        /// Text box in the un-enlarged base render.
        base_bbox: Rect,
        /// Region of the base render that is enlarged to fill the canvas.
        crop: Rect,
    },
    Distractor {
        distractors: u32,
        font_size: u32,
        digits: u32,
        number_index: u32,
        rep: u32,
    },
    Location {
        row: u32,
        col: u32,
        grid: (u32, u32),
        cell_size: u32,
        distractors: u32,
        rate: u32,
        digits: u32,
        number_index: u32,
    },
    BoundaryCut {
        axis: Axis,
        position: u32,
        rate: u32,
        digits: u32,
        number_index: u32,
        patch_size: u32,
        is_cut: bool,
        range_ratio: f64,
        crossed_boundaries: Vec<u32>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialParams {
    /// `(width, height)` of the stimulus.
    pub canvas: (u32, u32),
    #[serde(flatten)]
    pub cell: CellParams,
}

/// One probe: what is drawn where, what to ask, and the expected answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: String,
    pub suite: SuiteKind,
    pub params: TrialParams,
    pub ground_truth: String,
    pub prompt: String,
    pub placements: Vec<Placement>,
    /// PNG path relative to the suite directory.
    pub image: String,
}

impl TrialRecord {
    pub fn image_path_for(suite: SuiteKind, trial_id: &str) -> String {
        format!("images/{suite}/{trial_id}.png")
    }

    /// The placement holding the answer.
    pub fn target(&self) -> Option<&Placement> {
        self.placements
            .iter()
            .find(|p| p.label.as_deref() == Some("a"))
            .or_else(|| self.placements.first())
    }

    /// Canonical single-line JSON used in manifests.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trial records always serialise")
    }
}

/// Re-create a trial's stimulus from its record alone.
pub fn render_trial(rec: &TrialRecord) -> Result<GrayImage, ForgeError> {
    let (w, h) = rec.params.canvas;
    let mut canvas = GrayImage::white(w, h)?;
    match &rec.params.cell {
        CellParams::Quality { sampling_rate, render_rate, .. } => {
            let factor = ScaleFactor::new(*render_rate, *sampling_rate)?;
            for p in &rec.placements {
                raster::render_text(&mut canvas, &p.text, *render_rate, (p.bbox.x, p.bbox.y))?;
            }
            for p in &rec.placements {
                canvas = raster::degrade_region(&canvas, &p.bbox, factor)?;
            }
            Ok(canvas)
        }
        CellParams::Size { scale, base_rate, base_bbox, crop, .. } => {
            let factor = ScaleFactor::from_f64(*scale)?;
            for p in &rec.placements {
                raster::render_text(&mut canvas, &p.text, *base_rate, (base_bbox.x, base_bbox.y))?;
            }
            Ok(raster::crop_upsample_into(&canvas, crop, factor, w, h)?)
        }
        CellParams::Distractor { font_size: rate, .. } | CellParams::Location { rate, .. } | CellParams::BoundaryCut { rate, .. } => {
            for p in &rec.placements {
                raster::render_text(&mut canvas, &p.text, *rate, (p.bbox.x, p.bbox.y))?;
            }
            Ok(canvas)
        }
    }
}
