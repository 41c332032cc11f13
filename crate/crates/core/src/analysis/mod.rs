//! Scoring runs against their manifests, per-factor aggregation, and the
//! relative-size slicing of annotated VQA data.

pub mod convert;
mod slicing;
pub mod svg;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{AskError, RunRecord};
use crate::forge::{derive_seed, hash_str, rng::rng_for, CellParams, SuiteKind, TrialParams, TrialRecord};
use crate::metrics::{GpmInput, MatchResult};
use crate::patch::Axis;

pub use slicing::{
    count_distractors, quantile_slice, relative_target_area, slice_table_csv, unified_pixel_count, AnnBox, AnnotationRecord, Bucket,
    SliceError, SliceKey, SliceMode, UNIFIED_PIXELS,
};

/// Resamples per bootstrap interval.
pub const BOOTSTRAP_RESAMPLES: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("cell ({row}, {col}) lies outside the {rows}x{cols} grid of trial {trial_id}")]
    OutsideGrid { trial_id: String, row: u32, col: u32, rows: u32, cols: u32 },
}

/// A trial joined with its run outcome and scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub trial_id: String,
    pub suite: SuiteKind,
    pub backend_id: String,
    pub params: TrialParams,
    pub ground_truth: String,
    pub reply: Option<String>,
    pub error: Option<AskError>,
    #[serde(rename = "match")]
    pub score: MatchResult,
}

impl ScoredRecord {
    pub fn errored(&self) -> bool {
        self.error.is_some() || self.reply.is_none()
    }
}

/// Result of joining run records to a manifest by trial id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreOutcome {
    /// Sorted by trial id.
    pub scored: Vec<ScoredRecord>,
    /// Run records naming a trial the manifest does not contain.
    pub unknown_results: Vec<String>,
    /// Trials without a run record.
    pub unanswered: Vec<String>,
    /// Trials answered more than once; the last record wins.
    pub duplicate_results: Vec<String>,
}

/// Score every run record against its trial. Nothing is dropped silently:
/// unmatched ids on either side are listed in the outcome.
pub fn score_runs(trials: &[TrialRecord], runs: &[RunRecord]) -> ScoreOutcome {
    let by_id: HashMap<&str, &TrialRecord> = trials.iter().map(|t| (t.trial_id.as_str(), t)).collect();
    let mut latest: BTreeMap<&str, &RunRecord> = BTreeMap::new();
    let mut out = ScoreOutcome::default();
    for r in runs {
        if !by_id.contains_key(r.trial_id.as_str()) {
            out.unknown_results.push(r.trial_id.clone());
        } else if latest.insert(&r.trial_id, r).is_some() {
            out.duplicate_results.push(r.trial_id.clone());
        }
    }
    let mut unanswered: Vec<String> = trials.iter().filter(|t| !latest.contains_key(t.trial_id.as_str())).map(|t| t.trial_id.clone()).collect();
    unanswered.sort();
    out.unanswered = unanswered;
    let joined: Vec<(&TrialRecord, &RunRecord)> = latest.iter().map(|(id, r)| (by_id[id], *r)).collect();
    out.scored = joined.par_iter().map(|(t, r)| score_one(t, r)).collect();
    out.unknown_results.sort();
    out.duplicate_results.sort();
    out.duplicate_results.dedup();
    out
}

fn score_one(trial: &TrialRecord, run: &RunRecord) -> ScoredRecord {
    let score = match (&run.reply, &run.error) {
        (Some(text), None) => MatchResult::score(text, &[&trial.ground_truth], GpmInput::AnswerToken),
        _ => MatchResult::failed(),
    };
    ScoredRecord {
        trial_id: trial.trial_id.clone(),
        suite: trial.suite,
        backend_id: run.backend_id.clone(),
        params: trial.params.clone(),
        ground_truth: trial.ground_truth.clone(),
        reply: run.reply.clone(),
        error: run.error.clone(),
        score,
    }
}

/// Mean GPM of one cell of a factor sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// The held-fixed factor, e.g. `digits=3`.
    pub series: String,
    /// Name of the swept parameter.
    pub param: String,
    pub value: f64,
    pub mean: f64,
    pub n: usize,
    /// Trials with no reply; they count as GPM 0 in `mean`.
    pub errors: usize,
    pub ci_low: f64,
    pub ci_high: f64,
    pub inclusion: f64,
    pub exact: f64,
}

/// Which series and swept parameter a trial belongs to.
pub fn curve_cell(params: &TrialParams) -> (String, &'static str, f64) {
    match &params.cell {
        CellParams::Quality { sampling_rate, digits, .. } => (format!("digits={digits}"), "sampling_rate", f64::from(*sampling_rate)),
        CellParams::Size { scale, digits, .. } => (format!("digits={digits}"), "scale", *scale),
        CellParams::Distractor { distractors, font_size, .. } => (format!("font_size={font_size}"), "distractors", f64::from(*distractors)),
        CellParams::Location { row, col, grid, distractors, .. } => (format!("distractors={distractors}"), "cell", f64::from(row * grid.1 + col)),
        CellParams::BoundaryCut { axis, position, .. } => (format!("axis={}", axis.as_str()), "position", f64::from(*position)),
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Percentile bootstrap interval of the mean (nearest-rank 2.5% and 97.5%).
/// `values` must be sorted so the result depends only on the multiset.
pub fn bootstrap_ci(values: &[f64], seed: u64) -> (f64, f64) {
    match values.len() {
        0 => return (0.0, 0.0),
        1 => return (values[0], values[0]),
        _ => {}
    }
    let mut rng = rng_for(seed);
    let n = values.len();
    let mut means: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let rank = |p: f64| ((p * BOOTSTRAP_RESAMPLES as f64).ceil() as usize).clamp(1, BOOTSTRAP_RESAMPLES) - 1;
    (means[rank(0.025)], means[rank(0.975)])
}

#[derive(Default)]
struct Cell {
    gpm: Vec<f64>,
    inclusion: Vec<f64>,
    exact: Vec<f64>,
    errors: usize,
}

impl Cell {
    fn push(&mut self, r: &ScoredRecord) {
        self.gpm.push(r.score.gpm);
        self.inclusion.push(f64::from(r.score.inclusion));
        self.exact.push(f64::from(r.score.exact));
        self.errors += usize::from(r.errored());
    }

    /// Sorting makes every statistic independent of input order.
    fn finish(mut self) -> Cell {
        for v in [&mut self.gpm, &mut self.inclusion, &mut self.exact] {
            v.sort_by(f64::total_cmp);
        }
        self
    }
}

/// Mean GPM per (series, parameter) cell with a seeded bootstrap interval.
/// Ordered by series, then parameter value.
pub fn aggregate_curve(records: &[ScoredRecord], seed: u64) -> Vec<CurvePoint> {
    let mut cells: BTreeMap<(String, &'static str, u64), Cell> = BTreeMap::new();
    for r in records {
        let (series, param, value) = curve_cell(&r.params);
        // parameters are non-negative, so bit order is numeric order
        cells.entry((series, param, value.to_bits())).or_default().push(r);
    }
    cells
        .into_iter()
        .map(|((series, param, bits), cell)| {
            let cell = cell.finish();
            let value = f64::from_bits(bits);
            let (ci_low, ci_high) = bootstrap_ci(&cell.gpm, derive_seed(&[seed, hash_str(&series), bits]));
            CurvePoint {
                series,
                param: param.to_string(),
                value,
                mean: mean(&cell.gpm),
                n: cell.gpm.len(),
                errors: cell.errors,
                ci_low,
                ci_high,
                inclusion: mean(&cell.inclusion),
                exact: mean(&cell.exact),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    /// Distractor variant of the location sweep.
    pub distractors: u32,
    pub row: u32,
    pub col: u32,
    pub mean: f64,
    pub n: usize,
    pub errors: usize,
}

/// Mean GPM per grid cell of location trials; other trials are ignored.
/// Cells without trials are omitted.
pub fn aggregate_heatmap(records: &[ScoredRecord]) -> Result<Vec<HeatmapCell>, AnalysisError> {
    let mut cells: BTreeMap<(u32, u32, u32), Cell> = BTreeMap::new();
    for r in records {
        let CellParams::Location { row, col, grid, distractors, .. } = r.params.cell else { continue };
        if row >= grid.0 || col >= grid.1 {
            return Err(AnalysisError::OutsideGrid { trial_id: r.trial_id.clone(), row, col, rows: grid.0, cols: grid.1 });
        }
        cells.entry((distractors, row, col)).or_default().push(r);
    }
    Ok(cells
        .into_iter()
        .map(|((distractors, row, col), c)| {
            let c = c.finish();
            HeatmapCell { distractors, row, col, mean: mean(&c.gpm), n: c.gpm.len(), errors: c.errors }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioBin {
    /// Bin index `k` covers range ratios `[k/100, (k+1)/100)`; the last bin
    /// is closed.
    pub bin: u32,
    pub mean: f64,
    pub n: usize,
    /// Trials in the bin whose text is cut.
    pub n_cut: usize,
}

impl RatioBin {
    pub fn low(&self) -> f64 {
        f64::from(self.bin) / 100.0
    }

    pub fn high(&self) -> f64 {
        f64::from(self.bin + 1) / 100.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisCutReport {
    pub axis: Axis,
    pub bins: Vec<RatioBin>,
    pub cut_mean: f64,
    pub n_cut: usize,
    pub uncut_mean: f64,
    pub n_uncut: usize,
}

impl AxisCutReport {
    /// Bins lying wholly inside range ratios `[0.25, 0.75]`.
    pub fn window(&self) -> impl Iterator<Item = &RatioBin> {
        self.bins.iter().filter(|b| b.bin >= 25 && b.bin < 75)
    }
}

fn ratio_bin(r: f64) -> u32 {
    // the epsilon keeps exact multiples like 0.29 from rounding down a bin
    ((r * 100.0 + 1e-9).floor().max(0.0) as u32).min(99)
}

/// Per-axis boundary-cut summaries of the boundary trials in `records`.
pub fn boundary_cut_report(records: &[ScoredRecord]) -> Vec<AxisCutReport> {
    let mut by_axis: BTreeMap<&'static str, (Axis, BTreeMap<u32, (Cell, usize)>, Cell, Cell)> = BTreeMap::new();
    for r in records {
        let CellParams::BoundaryCut { axis, is_cut, range_ratio, .. } = &r.params.cell else { continue };
        let entry = by_axis.entry(axis.as_str()).or_insert_with(|| (*axis, BTreeMap::new(), Cell::default(), Cell::default()));
        let bin = entry.1.entry(ratio_bin(*range_ratio)).or_default();
        bin.0.push(r);
        bin.1 += usize::from(*is_cut);
        if *is_cut { &mut entry.2 } else { &mut entry.3 }.push(r);
    }
    by_axis
        .into_values()
        .map(|(axis, bins, cut, uncut)| {
            let (cut, uncut) = (cut.finish(), uncut.finish());
            AxisCutReport {
                axis,
                bins: bins
                    .into_iter()
                    .map(|(bin, (c, n_cut))| {
                        let c = c.finish();
                        RatioBin { bin, mean: mean(&c.gpm), n: c.gpm.len(), n_cut }
                    })
                    .collect(),
                cut_mean: mean(&cut.gpm),
                n_cut: cut.gpm.len(),
                uncut_mean: mean(&uncut.gpm),
                n_uncut: uncut.gpm.len(),
            }
        })
        .collect()
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("series,param,value,mean,n,ci_low,ci_high,errors,inclusion,exact\n");
    for p in points {
        let _ = writeln!(s, "{},{},{},{},{},{},{},{},{},{}", p.series, p.param, p.value, p.mean, p.n, p.ci_low, p.ci_high, p.errors, p.inclusion, p.exact);
    }
    s
}

pub fn heatmap_csv(cells: &[HeatmapCell]) -> String {
    let mut s = String::from("distractors,row,col,mean,n,errors\n");
    for c in cells {
        let _ = writeln!(s, "{},{},{},{},{},{}", c.distractors, c.row, c.col, c.mean, c.n, c.errors);
    }
    s
}

/// Binned means for every axis, then the cut/uncut summaries, with a
/// `window` column marking the 0.25 to 0.75 view.
pub fn boundary_csv(reports: &[AxisCutReport]) -> String {
    let mut s = String::from("axis,bin_low,bin_high,mean,n,n_cut,window\n");
    for r in reports {
        for b in &r.bins {
            let window = (25..75).contains(&b.bin);
            let _ = writeln!(s, "{},{:.2},{:.2},{},{},{},{}", r.axis.as_str(), b.low(), b.high(), b.mean, b.n, b.n_cut, window);
        }
    }
    s.push_str("\naxis,group,mean,n\n");
    for r in reports {
        let _ = writeln!(s, "{},cut,{},{}", r.axis.as_str(), r.cut_mean, r.n_cut);
        let _ = writeln!(s, "{},uncut,{},{}", r.axis.as_str(), r.uncut_mean, r.n_uncut);
    }
    s
}
