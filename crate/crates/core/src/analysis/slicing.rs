use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{gpm, normalize, GpmInput, MatchResult};

/// Pixels in a 224 x 224 model input.
pub const UNIFIED_PIXELS: u64 = 224 * 224;

/// An annotated box in image pixels. OCR tokens carry their text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl AnnBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> AnnBox {
        AnnBox { x, y, w, h, text: None }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// One VQA question in the neutral slicing schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub question_id: String,
    pub width: u32,
    pub height: u32,
    pub answers: Vec<String>,
    /// Objects the question refers to (GQA) or every OCR token (TextVQA).
    pub target_boxes: Vec<AnnBox>,
    /// Annotated objects the question does not refer to (GQA only).
    #[serde(default)]
    pub other_boxes: Vec<AnnBox>,
    #[serde(default)]
    pub prediction: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceMode {
    Gqa,
    TextVqa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceKey {
    RelativeSize,
    DistractorCount,
}

#[derive(Debug, Error, PartialEq)]
pub enum SliceError {
    #[error("question {0} has no boxes")]
    NoBoxes(String),
    #[error("{n} records cannot fill {q} buckets")]
    TooFewRecords { n: usize, q: usize },
    #[error("question {question_id}: {detail}")]
    InvalidRecord { question_id: String, detail: String },
}

fn invalid(rec: &AnnotationRecord, detail: impl Into<String>) -> SliceError {
    SliceError::InvalidRecord { question_id: rec.question_id.clone(), detail: detail.into() }
}

fn validate(rec: &AnnotationRecord) -> Result<(), SliceError> {
    if rec.width == 0 || rec.height == 0 {
        return Err(invalid(rec, "image has zero size"));
    }
    if rec.answers.is_empty() {
        return Err(invalid(rec, "no answers"));
    }
    let (w, h) = (f64::from(rec.width), f64::from(rec.height));
    for b in rec.target_boxes.iter().chain(&rec.other_boxes) {
        let ok = b.x >= 0.0 && b.y >= 0.0 && b.w >= 0.0 && b.h >= 0.0 && b.x + b.w <= w && b.y + b.h <= h;
        if !ok {
            return Err(invalid(rec, format!("box ({}, {}, {}, {}) exceeds the {}x{} image", b.x, b.y, b.w, b.h, rec.width, rec.height)));
        }
    }
    Ok(())
}

/// Area covered by at least one box, by coordinate compression.
pub(crate) fn union_area(boxes: &[AnnBox]) -> f64 {
    let mut xs: Vec<f64> = boxes.iter().flat_map(|b| [b.x, b.x + b.w]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut area = 0.0;
    for w in xs.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        let mut ys: Vec<(f64, f64)> = boxes.iter().filter(|b| b.x <= x0 && b.x + b.w >= x1).map(|b| (b.y, b.y + b.h)).collect();
        ys.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut covered = 0.0;
        let mut run: Option<(f64, f64)> = None;
        for (y0, y1) in ys {
            run = match run {
                Some((a, b)) if y0 <= b => Some((a, b.max(y1))),
                Some((a, b)) => {
                    covered += b - a;
                    Some((y0, y1))
                }
                None => Some((y0, y1)),
            };
        }
        if let Some((a, b)) = run {
            covered += b - a;
        }
        area += covered * (x1 - x0);
    }
    area
}

/// Index of the OCR box whose text best matches the first answer; ties go
/// to the larger box, then the earlier one.
fn best_text_box(rec: &AnnotationRecord) -> usize {
    let answer = normalize(&rec.answers[0]);
    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0);
    for (i, b) in rec.target_boxes.iter().enumerate() {
        let s = gpm(&normalize(b.text.as_deref().unwrap_or("")), &answer);
        if s > best.0 || (s == best.0 && b.area() > best.1) {
            best = (s, b.area(), i);
        }
    }
    best.2
}

/// Fraction of the image covered by the question's target.
pub fn relative_target_area(rec: &AnnotationRecord, mode: SliceMode) -> Result<f64, SliceError> {
    if rec.target_boxes.is_empty() {
        return Err(SliceError::NoBoxes(rec.question_id.clone()));
    }
    validate(rec)?;
    let covered = match mode {
        SliceMode::Gqa => union_area(&rec.target_boxes),
        SliceMode::TextVqa => rec.target_boxes[best_text_box(rec)].area(),
    };
    Ok(covered / (f64::from(rec.width) * f64::from(rec.height)))
}

/// Target pixels once the image is resized to 224 x 224.
pub fn unified_pixel_count(fraction: f64) -> u64 {
    (fraction * UNIFIED_PIXELS as f64).round() as u64
}

/// Objects (GQA) or OCR tokens (TextVQA) unrelated to the answer.
pub fn count_distractors(rec: &AnnotationRecord, mode: SliceMode) -> u32 {
    match mode {
        SliceMode::Gqa => rec.other_boxes.len() as u32,
        SliceMode::TextVqa => {
            let answers: Vec<String> = rec.answers.iter().map(|a| normalize(a)).collect();
            rec.target_boxes
                .iter()
                .filter(|b| {
                    let t = normalize(b.text.as_deref().unwrap_or(""));
                    !answers.iter().any(|a| *a == t || a.contains(t.as_str()))
                })
                .count() as u32
        }
    }
}

/// One equal-count slice: a row of the size-interval table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub index: usize,
    pub n: usize,
    pub key_low: f64,
    pub key_high: f64,
    /// Key interval in 224 x 224 pixels; relative-size slicing only.
    pub pixel_low: Option<u64>,
    pub pixel_high: Option<u64>,
    pub mean_distractors: f64,
    pub gpm: f64,
    pub exact: f64,
    pub inclusion: f64,
}

/// Sizes of `q` equal-count buckets over `n` items, the remainder going one
/// each to the first buckets.
pub(crate) fn bucket_sizes(n: usize, q: usize) -> Vec<usize> {
    (0..q).map(|i| n / q + usize::from(i < n % q)).collect()
}

/// Stable-sort `records` by `key` and split them into `q` equal-count buckets.
pub fn quantile_slice(records: &[AnnotationRecord], mode: SliceMode, key: SliceKey, q: usize) -> Result<Vec<Bucket>, SliceError> {
    if q == 0 || records.len() < q {
        return Err(SliceError::TooFewRecords { n: records.len(), q });
    }
    let mut rows = Vec::with_capacity(records.len());
    for rec in records {
        let area = relative_target_area(rec, mode);
        let distractors = f64::from(count_distractors(rec, mode));
        let k = match key {
            SliceKey::RelativeSize => area?,
            SliceKey::DistractorCount => {
                validate(rec)?;
                distractors
            }
        };
        let m = MatchResult::score(&rec.prediction, &rec.answers, GpmInput::Normalized);
        rows.push((k, distractors, m));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut start = 0;
    let mut out = Vec::with_capacity(q);
    for (index, size) in bucket_sizes(rows.len(), q).into_iter().enumerate() {
        let part = &rows[start..start + size];
        start += size;
        let avg = |f: &dyn Fn(&(f64, f64, MatchResult)) -> f64| part.iter().map(f).sum::<f64>() / size as f64;
        let (key_low, key_high) = (part[0].0, part[size - 1].0);
        let pixels = key == SliceKey::RelativeSize;
        out.push(Bucket {
            index,
            n: size,
            key_low,
            key_high,
            pixel_low: pixels.then(|| unified_pixel_count(key_low)),
            pixel_high: pixels.then(|| unified_pixel_count(key_high)),
            mean_distractors: avg(&|r| r.1),
            gpm: avg(&|r| r.2.gpm),
            exact: avg(&|r| f64::from(r.2.exact)),
            inclusion: avg(&|r| f64::from(r.2.inclusion)),
        });
    }
    Ok(out)
}

pub fn slice_table_csv(buckets: &[Bucket]) -> String {
    let mut s = String::from("quantile,n,key_low,key_high,pixel_low,pixel_high,mean_distractors,gpm,exact,inclusion\n");
    let opt = |v: Option<u64>| v.map(|p| p.to_string()).unwrap_or_default();
    for b in buckets {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            b.index + 1,
            b.n,
            b.key_low,
            b.key_high,
            opt(b.pixel_low),
            opt(b.pixel_high),
            b.mean_distractors,
            b.gpm,
            b.exact,
            b.inclusion
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(boxes: Vec<AnnBox>) -> AnnotationRecord {
        AnnotationRecord {
            question_id: "q".into(),
            width: 100,
            height: 100,
            answers: vec!["stop".into()],
            target_boxes: boxes,
            other_boxes: vec![],
            prediction: String::new(),
        }
    }

    fn text(x: f64, w: f64, t: &str) -> AnnBox {
        AnnBox { text: Some(t.into()), ..AnnBox::new(x, 0.0, w, 10.0) }
    }

    #[test]
    fn area_examples() {
        let full = rec(vec![AnnBox::new(0.0, 0.0, 100.0, 100.0)]);
        assert_eq!(relative_target_area(&full, SliceMode::Gqa), Ok(1.0));
        let disjoint = rec(vec![AnnBox::new(0.0, 0.0, 10.0, 100.0), AnnBox::new(50.0, 0.0, 20.0, 100.0)]);
        assert!((relative_target_area(&disjoint, SliceMode::Gqa).unwrap() - 0.3).abs() < 1e-12);
        let overlap = rec(vec![AnnBox::new(0.0, 0.0, 20.0, 100.0), AnnBox::new(10.0, 0.0, 20.0, 100.0)]);
        assert!((relative_target_area(&overlap, SliceMode::Gqa).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(relative_target_area(&rec(vec![]), SliceMode::Gqa), Err(SliceError::NoBoxes("q".into())));
        let outside = rec(vec![AnnBox::new(95.0, 0.0, 10.0, 10.0)]);
        assert!(matches!(relative_target_area(&outside, SliceMode::Gqa), Err(SliceError::InvalidRecord { .. })));
    }

    #[test]
    fn text_box_selection() {
        // best match wins
        let r = rec(vec![text(0.0, 10.0, "go"), text(20.0, 5.0, "STOP"), text(40.0, 30.0, "stoop")]);
        assert!((relative_target_area(&r, SliceMode::TextVqa).unwrap() - 0.005).abs() < 1e-12);
        // equal similarity: larger area, then first
        let r = rec(vec![text(0.0, 10.0, "stop"), text(20.0, 30.0, "stop"), text(60.0, 30.0, "stop")]);
        assert!((relative_target_area(&r, SliceMode::TextVqa).unwrap() - 0.03).abs() < 1e-12);
    }

    #[test]
    fn pixel_counts() {
        assert_eq!(unified_pixel_count(1.0), 50176);
        assert_eq!(unified_pixel_count(0.25), 12544);
        assert_eq!(unified_pixel_count(0.0005), 25);
    }

    #[test]
    fn distractor_counts() {
        let mut r = rec(vec![text(0.0, 1.0, "Stop"), text(1.0, 1.0, "stop!")]);
        assert_eq!(count_distractors(&r, SliceMode::TextVqa), 0);
        r.answers = vec!["stop sign".into()];
        r.target_boxes = ["a", "stop", "sign", "sig", "way"].iter().map(|t| text(0.0, 1.0, t)).collect();
        // "a" is not a substring of "stop sign"; "sig" is
        assert_eq!(count_distractors(&r, SliceMode::TextVqa), 2);
        r.other_boxes = vec![AnnBox::new(0.0, 0.0, 1.0, 1.0); 3];
        assert_eq!(count_distractors(&r, SliceMode::Gqa), 3);
    }

    #[test]
    fn bucket_size_rule() {
        assert_eq!(bucket_sizes(10, 5), vec![2; 5]);
        assert_eq!(bucket_sizes(11, 5), vec![3, 2, 2, 2, 2]);
        assert_eq!(bucket_sizes(14, 5), vec![3, 3, 3, 3, 2]);
        let few: Vec<_> = (0..4).map(|_| rec(vec![AnnBox::new(0.0, 0.0, 1.0, 1.0)])).collect();
        assert_eq!(quantile_slice(&few, SliceMode::Gqa, SliceKey::RelativeSize, 5), Err(SliceError::TooFewRecords { n: 4, q: 5 }));
    }
}
