//! Declarative suite specifications.
//!
//! A spec document is JSON:
//!
//! ```json
//! {
//!   "master_seed": 7,
//!   "profile": "blip2",
//!   "suites": [
//!     { "kind": "quality", "trials_per_cell": 50 },
//!     { "kind": "boundary_cut", "param_grid": ["vertical"], "step": 4 }
//!   ]
//! }
//! ```
//!
//! Every field except `kind` has a default reproducing the full protocol.
//! Field-level problems are reported with the line and column where they
//! occur.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patch::{Axis, ModelProfile, ProfileRegistry};

pub const PROMPT_READ: &str = "What is the number on the image?";
pub const PROMPT_VARIABLE: &str = "What is the number assigned to variable 'a' in the image?";

/// Labels available for the target and up to nine distractors.
pub const LABELS: [char; 10] = ['a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'i', 'j'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteKind {
    Quality,
    Size,
    Distractor,
    Location,
    BoundaryCut,
}

impl SuiteKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SuiteKind::Quality => "quality",
            SuiteKind::Size => "size",
            SuiteKind::Distractor => "distractor",
            SuiteKind::Location => "location",
            SuiteKind::BoundaryCut => "boundary_cut",
        }
    }

    pub fn all() -> [SuiteKind; 5] {
        [SuiteKind::Quality, SuiteKind::Size, SuiteKind::Distractor, SuiteKind::Location, SuiteKind::BoundaryCut]
    }
}

impl std::fmt::Display for SuiteKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SuiteKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SuiteKind::all()
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown suite kind {s:?}"))
    }
}

/// The swept parameter of a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGrid {
    /// Effective sampling rates in pixels per glyph height.
    SamplingRates(Vec<u32>),
    /// Enlargement factors.
    Scales(Vec<f64>),
    /// Number of distractors per image.
    DistractorCounts(Vec<u32>),
    /// Location variants, by number of distractors.
    DistractorVariants(Vec<u32>),
    /// Sweep directions.
    Axes(Vec<Axis>),
}

impl ParamGrid {
    pub fn len(&self) -> usize {
        match self {
            ParamGrid::SamplingRates(v) => v.len(),
            ParamGrid::Scales(v) => v.len(),
            ParamGrid::DistractorCounts(v) | ParamGrid::DistractorVariants(v) => v.len(),
            ParamGrid::Axes(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One fully resolved suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub kind: SuiteKind,
    /// Canvas profile. For location and boundary-cut suites this is already
    /// merged to the cell size the sweep uses.
    pub profile: ModelProfile,
    pub param_grid: ParamGrid,
    pub digit_tiers: Vec<u32>,
    pub trials_per_cell: u32,
    pub master_seed: u64,
    pub prompt_template: String,
    /// Font sizes for distractor suites; the pixel rate for every other suite
    /// is a single entry.
    pub font_sizes: Vec<u32>,
    /// Position resamplings per number (distractor suite).
    pub reps: u32,
    /// Rate the quality suite renders at before degrading.
    pub render_rate: u32,
    /// Boundary sweep stride in pixels.
    pub step: u32,
}

impl SuiteSpec {
    /// The full-scale default for `kind` on `profile`.
    pub fn defaults(kind: SuiteKind, profile: &ModelProfile, master_seed: u64) -> SuiteSpec {
        let merge = profile.default_sweep_merge();
        let sweep_profile = || profile.merged(merge).unwrap_or_else(|_| profile.clone());
        let base = SuiteSpec {
            kind,
            profile: profile.clone(),
            param_grid: ParamGrid::SamplingRates(vec![]),
            digit_tiers: vec![3, 5, 7],
            trials_per_cell: 500,
            master_seed,
            prompt_template: PROMPT_READ.to_string(),
            font_sizes: vec![8],
            reps: 1,
            render_rate: 20,
            step: 1,
        };
        match kind {
            SuiteKind::Quality => SuiteSpec { param_grid: ParamGrid::SamplingRates((1..=10).map(|i| 2 * i).collect()), font_sizes: vec![20], ..base },
            SuiteKind::Size => SuiteSpec { param_grid: ParamGrid::Scales((0..10).map(|i| 1.0 + 0.5 * f64::from(i)).collect()), ..base },
            SuiteKind::Distractor => SuiteSpec {
                param_grid: ParamGrid::DistractorCounts((0..=9).collect()),
                digit_tiers: vec![3],
                trials_per_cell: 100,
                prompt_template: PROMPT_VARIABLE.to_string(),
                font_sizes: vec![8, 12],
                reps: 5,
                ..base
            },
            SuiteKind::Location => SuiteSpec {
                profile: sweep_profile(),
                param_grid: ParamGrid::DistractorVariants(vec![0, if profile.ocr_enhanced { 9 } else { 1 }]),
                digit_tiers: vec![3],
                trials_per_cell: 100,
                prompt_template: PROMPT_VARIABLE.to_string(),
                ..base
            },
            SuiteKind::BoundaryCut => SuiteSpec {
                param_grid: ParamGrid::Axes(vec![Axis::Vertical, Axis::Horizontal]),
                digit_tiers: vec![patch_digit_capacity(profile.patch_size, base.rate())],
                trials_per_cell: 100,
                ..base
            },
        }
    }

    /// Identifier mixed into trial ids and seeds.
    pub fn suite_id(&self) -> String {
        format!("{}/{}", self.kind, self.profile.name)
    }

    /// Fixed glyph height for the non-quality suites.
    pub fn rate(&self) -> u32 {
        self.font_sizes.first().copied().unwrap_or(8)
    }
}

/// Largest digit count whose rendered width at `rate` fits one patch (at least 1).
pub fn patch_digit_capacity(patch_size: u32, rate: u32) -> u32 {
    (1..=18u32)
        .take_while(|&n| crate::raster::measure_text(&"8".repeat(n as usize), rate).is_ok_and(|(w, _)| w <= patch_size))
        .last()
        .unwrap_or(1)
}

/// A validation failure, with its position in the source document when known.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("{}{message}", location.map(|(l, c)| format!("line {l}, column {c}: ")).unwrap_or_default())]
pub struct SpecError {
    pub location: Option<(usize, usize)>,
    pub message: String,
}

impl SpecError {
    fn at(location: Option<(usize, usize)>, message: impl Into<String>) -> Self {
        SpecError { location, message: message.into() }
    }
}

mod checked {
    //! Field types that reject bad values while the document is parsed, so
    //! the parser attaches line and column to the message.

    use serde::de::Error;
    use serde::{Deserialize, Deserializer};

    pub fn positive<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u32>, D::Error> {
        let v = Option::<u32>::deserialize(d)?;
        if v == Some(0) {
            return Err(D::Error::custom("value must be at least 1"));
        }
        Ok(v)
    }

    pub fn positive_list<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u32>>, D::Error> {
        let v = Option::<Vec<u32>>::deserialize(d)?;
        if let Some(list) = &v {
            if list.is_empty() {
                return Err(D::Error::custom("list must not be empty"));
            }
            if list.contains(&0) {
                return Err(D::Error::custom("entries must be at least 1"));
            }
        }
        Ok(v)
    }

    pub fn digit_tiers<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u32>>, D::Error> {
        let v = positive_list(d)?;
        if let Some(list) = &v {
            if list.iter().any(|&n| n > 18) {
                return Err(D::Error::custom("digit tiers must be between 1 and 18"));
            }
        }
        Ok(v)
    }

    pub fn non_empty_values<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<serde_json::Value>>, D::Error> {
        let v = Option::<Vec<serde_json::Value>>::deserialize(d)?;
        if v.as_ref().is_some_and(Vec::is_empty) {
            return Err(D::Error::custom("param_grid must not be empty"));
        }
        Ok(v)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSuite {
    kind: SuiteKind,
    #[serde(default)]
    profile: Option<String>,
    #[serde(default, deserialize_with = "checked::positive")]
    merge: Option<u32>,
    #[serde(default, deserialize_with = "checked::non_empty_values")]
    param_grid: Option<Vec<serde_json::Value>>,
    #[serde(default, deserialize_with = "checked::digit_tiers")]
    digit_tiers: Option<Vec<u32>>,
    #[serde(default, deserialize_with = "checked::positive")]
    trials_per_cell: Option<u32>,
    #[serde(default)]
    master_seed: Option<u64>,
    #[serde(default)]
    prompt_template: Option<String>,
    #[serde(default, deserialize_with = "checked::positive_list")]
    font_sizes: Option<Vec<u32>>,
    #[serde(default, deserialize_with = "checked::positive")]
    reps: Option<u32>,
    #[serde(default, deserialize_with = "checked::positive")]
    render_rate: Option<u32>,
    #[serde(default, deserialize_with = "checked::positive")]
    step: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    #[serde(default)]
    master_seed: u64,
    #[serde(default)]
    profile: Option<String>,
    suites: Vec<RawSuite>,
}

/// Overrides applied on top of a parsed document (command-line flags).
#[derive(Debug, Clone, Default)]
pub struct SpecOverrides {
    pub profile: Option<String>,
    pub master_seed: Option<u64>,
}

/// Parse and resolve a spec document into concrete suites.
pub fn parse_spec_document(text: &str, registry: &ProfileRegistry, overrides: &SpecOverrides) -> Result<Vec<SuiteSpec>, SpecError> {
    let doc: RawDocument = serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        // serde_json appends " at line L column C"; keep only the message
        let msg = msg.rsplit_once(" at line ").map(|(m, _)| m.to_string()).unwrap_or(msg);
        SpecError::at((e.line() > 0).then(|| (e.line(), e.column())), msg)
    })?;
    if doc.suites.is_empty() {
        return Err(SpecError::at(locate(text, "\"suites\""), "spec lists no suites"));
    }
    doc.suites
        .iter()
        .map(|raw| resolve_suite(text, raw, &doc, registry, overrides))
        .collect()
}

fn resolve_suite(text: &str, raw: &RawSuite, doc: &RawDocument, registry: &ProfileRegistry, overrides: &SpecOverrides) -> Result<SuiteSpec, SpecError> {
    let profile_name = overrides
        .profile
        .clone()
        .or_else(|| raw.profile.clone())
        .or_else(|| doc.profile.clone())
        .ok_or_else(|| SpecError::at(None, format!("{} suite has no profile", raw.kind)))?;
    let profile = registry
        .get(&profile_name)
        .map_err(|e| SpecError::at(locate(text, &format!("\"{profile_name}\"")), e.to_string()))?
        .clone();
    let seed = overrides.master_seed.or(raw.master_seed).unwrap_or(doc.master_seed);
    let mut spec = SuiteSpec::defaults(raw.kind, &profile, seed);
    let grid_loc = || locate(text, "\"param_grid\"");

    if let Some(k) = raw.merge {
        if !matches!(raw.kind, SuiteKind::Location | SuiteKind::BoundaryCut) {
            return Err(SpecError::at(locate(text, "\"merge\""), "merge applies only to location and boundary_cut suites"));
        }
        spec.profile = profile.merged(k).map_err(|e| SpecError::at(locate(text, "\"merge\""), e.to_string()))?;
    }
    if let Some(values) = &raw.param_grid {
        spec.param_grid = parse_grid(raw.kind, values).map_err(|m| SpecError::at(grid_loc(), m))?;
    }
    if let Some(v) = &raw.digit_tiers {
        spec.digit_tiers = v.clone();
    }
    if let Some(v) = raw.trials_per_cell {
        spec.trials_per_cell = v;
    }
    if let Some(v) = &raw.prompt_template {
        if v.trim().is_empty() {
            return Err(SpecError::at(locate(text, "\"prompt_template\""), "prompt_template must not be empty"));
        }
        spec.prompt_template = v.clone();
    }
    if let Some(v) = &raw.font_sizes {
        spec.font_sizes = v.clone();
    }
    if let Some(v) = raw.reps {
        spec.reps = v;
    }
    if let Some(v) = raw.render_rate {
        spec.render_rate = v;
    }
    if let Some(v) = raw.step {
        spec.step = v;
    }
    check_consistency(&spec).map_err(|(field, m)| SpecError::at(locate(text, &format!("\"{field}\"")), m))?;
    Ok(spec)
}

fn parse_grid(kind: SuiteKind, values: &[serde_json::Value]) -> Result<ParamGrid, String> {
    let ints = || -> Result<Vec<u32>, String> {
        values
            .iter()
            .map(|v| v.as_u64().and_then(|n| u32::try_from(n).ok()).ok_or_else(|| format!("expected a non-negative integer, got {v}")))
            .collect()
    };
    Ok(match kind {
        SuiteKind::Quality => ParamGrid::SamplingRates(ints()?),
        SuiteKind::Distractor => ParamGrid::DistractorCounts(ints()?),
        SuiteKind::Location => ParamGrid::DistractorVariants(ints()?),
        SuiteKind::Size => ParamGrid::Scales(
            values
                .iter()
                .map(|v| v.as_f64().ok_or_else(|| format!("expected a number, got {v}")))
                .collect::<Result<_, _>>()?,
        ),
        SuiteKind::BoundaryCut => ParamGrid::Axes(
            values
                .iter()
                .map(|v| serde_json::from_value(v.clone()).map_err(|_| format!("expected \"vertical\" or \"horizontal\", got {v}")))
                .collect::<Result<_, _>>()?,
        ),
    })
}

/// Cross-field checks; returns the offending field name with the message.
pub fn check_consistency(spec: &SuiteSpec) -> Result<(), (&'static str, String)> {
    if spec.param_grid.is_empty() {
        return Err(("param_grid", "param_grid must not be empty".into()));
    }
    if spec.trials_per_cell == 0 {
        return Err(("trials_per_cell", "trials_per_cell must be at least 1".into()));
    }
    if spec.digit_tiers.is_empty() {
        return Err(("digit_tiers", "digit_tiers must not be empty".into()));
    }
    match &spec.param_grid {
        ParamGrid::SamplingRates(rates) => {
            if let Some(r) = rates.iter().find(|&&r| r == 0 || r > spec.render_rate) {
                return Err(("param_grid", format!("sampling rate {r} must be within 1..={}", spec.render_rate)));
            }
        }
        ParamGrid::Scales(scales) => {
            if let Some(s) = scales.iter().find(|&&s| !(s.is_finite() && s >= 1.0)) {
                return Err(("param_grid", format!("scale {s} must be a finite number >= 1")));
            }
        }
        ParamGrid::DistractorCounts(ks) => {
            if let Some(k) = ks.iter().find(|&&k| k as usize >= LABELS.len()) {
                return Err(("param_grid", format!("{k} distractors exceed the {} available labels", LABELS.len() - 1)));
            }
        }
        ParamGrid::DistractorVariants(ks) => {
            let cells = spec.profile.cell_count();
            if let Some(k) = ks.iter().find(|&&k| k as usize >= LABELS.len() || k >= cells) {
                return Err(("param_grid", format!("{k} distractors do not fit the labels or the {cells} cells")));
            }
        }
        ParamGrid::Axes(axes) => {
            if axes.is_empty() {
                return Err(("param_grid", "no axes".into()));
            }
        }
    }
    Ok(())
}

/// Line and column of the first occurrence of `needle` in `text`.
fn locate(text: &str, needle: &str) -> Option<(usize, usize)> {
    let offset = text.find(needle)?;
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = offset - before.rfind('\n').map(|i| i + 1).unwrap_or(0) + 1;
    Some((line, column))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<SuiteSpec>, SpecError> {
        parse_spec_document(text, &ProfileRegistry::builtin(), &SpecOverrides::default())
    }

    #[test]
    fn defaults_follow_protocol() {
        let specs = parse(
            r#"{"profile": "blip2", "master_seed": 3, "suites": [
                {"kind": "quality"}, {"kind": "size"}, {"kind": "distractor"},
                {"kind": "location"}, {"kind": "boundary_cut"}]}"#,
        )
        .unwrap();
        assert_eq!(specs[0].param_grid, ParamGrid::SamplingRates(vec![2, 4, 6, 8, 10, 12, 14, 16, 18, 20]));
        assert_eq!(specs[0].trials_per_cell, 500);
        assert_eq!(
            specs[1].param_grid,
            ParamGrid::Scales(vec![1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0, 5.5])
        );
        assert_eq!(specs[2].param_grid, ParamGrid::DistractorCounts((0..=9).collect()));
        assert_eq!((specs[2].font_sizes.clone(), specs[2].reps), (vec![8, 12], 5));
        assert_eq!(specs[3].profile.grid, (8, 8));
        assert_eq!(specs[3].param_grid, ParamGrid::DistractorVariants(vec![0, 1]));
        assert_eq!(specs[4].digit_tiers, vec![3]);
        assert_eq!(specs[4].profile.patch_size, 14);
        assert!(specs.iter().all(|s| s.master_seed == 3));
    }

    #[test]
    fn model_specific_defaults() {
        let specs = parse(
            r#"{"master_seed": 1, "suites": [
                {"kind": "location", "profile": "qwen-vl-chat"},
                {"kind": "location", "profile": "fuyu-8b"},
                {"kind": "boundary_cut", "profile": "fuyu-8b"}]}"#,
        )
        .unwrap();
        assert_eq!(specs[0].param_grid, ParamGrid::DistractorVariants(vec![0, 9]));
        assert_eq!(specs[0].profile.grid, (16, 16));
        assert_eq!(specs[1].profile.grid, (10, 10));
        assert_eq!(specs[1].param_grid, ParamGrid::DistractorVariants(vec![0, 1]));
        assert_eq!(specs[2].digit_tiers, vec![6]);
    }

    #[test]
    fn overrides_win() {
        let o = SpecOverrides { profile: Some("fuyu-8b".into()), master_seed: Some(99) };
        let specs = parse_spec_document(
            r#"{"profile": "blip2", "master_seed": 3, "suites": [{"kind": "quality"}]}"#,
            &ProfileRegistry::builtin(),
            &o,
        )
        .unwrap();
        assert_eq!((specs[0].profile.name.as_str(), specs[0].master_seed), ("fuyu-8b", 99));
    }

    #[test]
    fn errors_carry_lines() {
        let text = "{\n  \"profile\": \"blip2\",\n  \"suites\": [\n    {\"kind\": \"quality\",\n     \"trials_per_cell\": 0}\n  ]\n}";
        let err = parse(text).unwrap_err();
        assert_eq!(err.location.map(|l| l.0), Some(5), "{err}");
        assert!(err.message.contains("at least 1"));

        let text = "{\"profile\": \"blip2\",\n\"suites\": [{\"kind\": \"quality\",\n\"param_grid\": [4, 40]}]}";
        let err = parse(text).unwrap_err();
        assert_eq!(err.location.map(|l| l.0), Some(3));

        let text = "{\"profile\": \"nope\",\n\"suites\": [{\"kind\": \"quality\"}]}";
        let err = parse(text).unwrap_err();
        assert_eq!(err.location, Some((1, 13)));

        let err = parse("{\"suites\": [{\"kind\": \"quality\", \"bogus\": 1}]}").unwrap_err();
        assert!(err.message.contains("bogus"), "{err}");

        let err = parse("{\"profile\": \"blip2\",\n\"suites\": [{\"kind\": \"distractor\", \"param_grid\": [10]}]}").unwrap_err();
        assert_eq!(err.location.map(|l| l.0), Some(2));
        let err = parse("{\"profile\": \"blip2\", \"suites\": []}").unwrap_err();
        assert!(err.message.contains("no suites"));
    }

    #[test]
    fn digit_capacity() {
        assert_eq!(patch_digit_capacity(14, 8), 3);
        assert_eq!(patch_digit_capacity(30, 8), 6);
        assert_eq!(patch_digit_capacity(28, 8), 5);
        assert_eq!(patch_digit_capacity(2, 8), 1);
    }

    #[test]
    fn axes_and_merge() {
        let specs = parse(
            r#"{"profile": "blip2", "suites": [{"kind": "boundary_cut", "merge": 2, "param_grid": ["horizontal"], "step": 7}]}"#,
        )
        .unwrap();
        assert_eq!(specs[0].profile.patch_size, 28);
        assert_eq!(specs[0].param_grid, ParamGrid::Axes(vec![Axis::Horizontal]));
        assert_eq!(specs[0].step, 7);
        assert!(parse(r#"{"profile": "blip2", "suites": [{"kind": "quality", "merge": 2}]}"#).is_err());
    }
}
