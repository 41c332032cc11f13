//! Vision-transformer patch grids and the placement math built on them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Rect;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PatchError {
    #[error("merge factor {k} does not divide the {rows}x{cols} grid")]
    NonDivisibleMerge { k: u32, rows: u32, cols: u32 },
    #[error("text {text_w}x{text_h} does not fit a {cell}px cell")]
    TextLargerThanCell { text_w: u32, text_h: u32, cell: u32 },
    #[error("cell ({row}, {col}) is outside the {rows}x{cols} grid")]
    CellOutOfGrid { row: u32, col: u32, rows: u32, cols: u32 },
    #[error("box is not cut along the {0:?} axis")]
    NotCut(Axis),
    #[error("invalid profile {name}: {reason}")]
    InvalidProfile { name: String, reason: String },
    #[error("unknown model profile {0:?}")]
    UnknownProfile(String),
    #[error("profile file {path}: {reason}")]
    ProfileFile { path: String, reason: String },
}

/// Orientation of the patch boundary a box is tested against.
///
/// A vertical cut is a column boundary `x = i * P`; a horizontal cut is a row
/// boundary `y = i * P`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Vertical,
    Horizontal,
}

impl Axis {
    pub fn as_str(&self) -> &'static str {
        match self {
            Axis::Vertical => "vertical",
            Axis::Horizontal => "horizontal",
        }
    }
}

/// Input geometry of one model: resolution, square patch size, and grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub name: String,
    /// `(width, height)` in pixels.
    pub resolution: (u32, u32),
    /// Effective (possibly merged) square patch edge in pixels.
    pub patch_size: u32,
    /// `(rows, cols)`.
    pub grid: (u32, u32),
    #[serde(default = "one")]
    pub merge_factor: u32,
    /// Trained heavily on OCR data; the location sweep pairs it with nine
    /// distractors instead of one.
    #[serde(default)]
    pub ocr_enhanced: bool,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileEntry {
    resolution: (u32, u32),
    patch_size: u32,
    #[serde(default)]
    grid: Option<(u32, u32)>,
    #[serde(default)]
    ocr_enhanced: bool,
}

impl ModelProfile {
    pub fn new(name: &str, resolution: (u32, u32), patch_size: u32) -> Result<Self, PatchError> {
        let p = ModelProfile {
            name: name.to_string(),
            resolution,
            patch_size,
            grid: (resolution.1 / patch_size.max(1), resolution.0 / patch_size.max(1)),
            merge_factor: 1,
            ocr_enhanced: false,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PatchError> {
        let bad = |reason: String| Err(PatchError::InvalidProfile { name: self.name.clone(), reason });
        let (w, h) = self.resolution;
        let p = self.patch_size;
        if p == 0 || w == 0 || h == 0 {
            return bad("zero-sized resolution or patch".into());
        }
        if w % p != 0 || h % p != 0 {
            return bad(format!("patch {p} does not divide {w}x{h}"));
        }
        if self.grid != (h / p, w / p) {
            return bad(format!("grid {:?} inconsistent with {w}x{h} / {p}", self.grid));
        }
        if self.merge_factor == 0 {
            return bad("merge factor must be at least 1".into());
        }
        Ok(())
    }

    pub fn width(&self) -> u32 {
        self.resolution.0
    }

    pub fn height(&self) -> u32 {
        self.resolution.1
    }

    pub fn rows(&self) -> u32 {
        self.grid.0
    }

    pub fn cols(&self) -> u32 {
        self.grid.1
    }

    pub fn cell_count(&self) -> u32 {
        self.grid.0 * self.grid.1
    }

    /// Pixel rectangle of cell `(row, col)`.
    pub fn cell_rect(&self, row: u32, col: u32) -> Result<Rect, PatchError> {
        if row >= self.rows() || col >= self.cols() {
            return Err(PatchError::CellOutOfGrid { row, col, rows: self.rows(), cols: self.cols() });
        }
        let p = self.patch_size;
        Ok(Rect::new(col * p, row * p, p, p))
    }

    /// Raster-order (row-major) token index of the patch holding pixel `(x, y)`.
    pub fn patch_index(&self, x: u32, y: u32) -> u32 {
        (y / self.patch_size) * self.cols() + x / self.patch_size
    }

    /// Merge `k x k` neighbouring patches into one.
    pub fn merged(&self, k: u32) -> Result<ModelProfile, PatchError> {
        let (rows, cols) = self.grid;
        if k == 0 || rows % k != 0 || cols % k != 0 {
            return Err(PatchError::NonDivisibleMerge { k, rows, cols });
        }
        Ok(ModelProfile {
            name: self.name.clone(),
            resolution: self.resolution,
            patch_size: self.patch_size * k,
            grid: (rows / k, cols / k),
            merge_factor: self.merge_factor * k,
            ocr_enhanced: self.ocr_enhanced,
        })
    }

    /// Merge factor the location sweep uses by default: 14-pixel patches are
    /// merged 2x2 into 28-pixel cells, larger patches stay as-is.
    pub fn default_sweep_merge(&self) -> u32 {
        if self.patch_size == 14 && self.merge_factor == 1 {
            2
        } else {
            1
        }
    }
}

/// Merge `k x k` adjacent patches of `profile`.
pub fn merged_grid(profile: &ModelProfile, k: u32) -> Result<ModelProfile, PatchError> {
    profile.merged(k)
}

/// Built-in profiles, in the order they are usually reported.
pub fn builtin_profiles() -> Vec<ModelProfile> {
    let mk = |name: &str, res: u32, p: u32, ocr: bool| ModelProfile {
        name: name.to_string(),
        resolution: (res, res),
        patch_size: p,
        grid: (res / p, res / p),
        merge_factor: 1,
        ocr_enhanced: ocr,
    };
    vec![
        mk("blip2", 224, 14, false),
        mk("instructblip", 224, 14, false),
        mk("llava-1.5", 336, 14, false),
        mk("qwen-vl-chat", 448, 14, true),
        // variable patch count in the real model, frozen at 10x10 here
        mk("fuyu-8b", 300, 30, false),
    ]
}

fn canonical(name: &str) -> String {
    name.trim().to_ascii_lowercase().replace(['_', ' '], "-")
}

/// Named profile lookup. Built-ins are always present; a JSON file keyed by
/// model name can add or override entries.
#[derive(Debug, Clone)]
pub struct ProfileRegistry {
    profiles: BTreeMap<String, ModelProfile>,
}

impl Default for ProfileRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl ProfileRegistry {
    pub fn builtin() -> Self {
        let profiles = builtin_profiles().into_iter().map(|p| (p.name.clone(), p)).collect();
        ProfileRegistry { profiles }
    }

    /// Parse `{"name": {"resolution": [w, h], "patch_size": p, "grid": [r, c]?}}`.
    pub fn extend_from_json(&mut self, text: &str) -> Result<(), PatchError> {
        let entries: BTreeMap<String, ProfileEntry> = serde_json::from_str(text)
            .map_err(|e| PatchError::ProfileFile { path: "<inline>".into(), reason: e.to_string() })?;
        for (name, e) in entries {
            let p = e.patch_size.max(1);
            let profile = ModelProfile {
                name: canonical(&name),
                resolution: e.resolution,
                patch_size: e.patch_size,
                grid: e.grid.unwrap_or((e.resolution.1 / p, e.resolution.0 / p)),
                merge_factor: 1,
                ocr_enhanced: e.ocr_enhanced,
            };
            profile.validate()?;
            self.profiles.insert(profile.name.clone(), profile);
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), PatchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PatchError::ProfileFile { path: path.display().to_string(), reason: e.to_string() })?;
        self.extend_from_json(&text).map_err(|e| match e {
            PatchError::ProfileFile { reason, .. } => PatchError::ProfileFile { path: path.display().to_string(), reason },
            other => other,
        })
    }

    pub fn get(&self, name: &str) -> Result<&ModelProfile, PatchError> {
        self.profiles.get(&canonical(name)).ok_or_else(|| PatchError::UnknownProfile(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.profiles.keys().map(String::as_str)
    }
}

/// Top-left anchor that centres a `text_w x text_h` box in cell `(row, col)`.
/// Odd leftover pixels go to the right/bottom side.
pub fn cell_center_anchor(profile: &ModelProfile, row: u32, col: u32, text_w: u32, text_h: u32) -> Result<(u32, u32), PatchError> {
    let cell = profile.cell_rect(row, col)?;
    if text_w > cell.w || text_h > cell.h {
        return Err(PatchError::TextLargerThanCell { text_w, text_h, cell: profile.patch_size });
    }
    Ok((cell.x + (cell.w - text_w) / 2, cell.y + (cell.h - text_h) / 2))
}

/// Where a box sits relative to the patch boundaries along one axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutReport {
    pub axis: Axis,
    pub crossed_boundaries: Vec<u32>,
    pub is_cut: bool,
    /// Leading-edge position over the travel span, in `[0, 1]`.
    pub range_ratio: f64,
}

/// Boundaries strictly inside the box interior; a box edge lying on a
/// boundary does not count as a cut.
pub fn classify_cut(bbox: &Rect, profile: &ModelProfile, axis: Axis) -> CutReport {
    let p = profile.patch_size;
    let (start, len, span) = match axis {
        Axis::Vertical => (bbox.x, bbox.w, profile.width()),
        Axis::Horizontal => (bbox.y, bbox.h, profile.height()),
    };
    let end = start + len;
    // first multiple of p strictly greater than start
    let first = (start / p + 1) * p;
    let crossed: Vec<u32> = (first..end).step_by(p as usize).collect();
    let travel = span.saturating_sub(len);
    let range_ratio = if travel == 0 { 0.0 } else { f64::from(start) / f64::from(travel) };
    CutReport { axis, is_cut: !crossed.is_empty(), crossed_boundaries: crossed, range_ratio }
}

/// Raster-order gap between the two tokens on either side of the first
/// boundary crossing the box.
pub fn token_distance(profile: &ModelProfile, bbox: &Rect, axis: Axis) -> Result<u32, PatchError> {
    let report = classify_cut(bbox, profile, axis);
    let b = *report.crossed_boundaries.first().ok_or(PatchError::NotCut(axis))?;
    let (before, after) = match axis {
        Axis::Vertical => (profile.patch_index(b - 1, bbox.y), profile.patch_index(b, bbox.y)),
        Axis::Horizontal => (profile.patch_index(bbox.x, b - 1), profile.patch_index(bbox.x, b)),
    };
    Ok(after - before)
}
