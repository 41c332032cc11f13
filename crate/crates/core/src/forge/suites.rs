use rand::seq::index;
use rand::Rng;

use super::rng::{derive_seed, draw_number, draw_number_with, hash_str, rng_for};
use super::spec::{ParamGrid, SuiteKind, SuiteSpec, LABELS};
use super::trial::{CellParams, Placement, TrialParams, TrialRecord};
use super::ForgeError;
use crate::patch::{cell_center_anchor, classify_cut, Axis};
use crate::raster::{measure_text, Rect, ScaleFactor};

const PLACEMENT_ATTEMPTS: u32 = 1000;
const PLACEMENT_PAD: u32 = 2;

// salts separating the number stream from placement streams
const SALT_NUMBER: u64 = 0x6e75_6d62;
const SALT_LAYOUT: u64 = 0x6c61_796f;
const SALT_TRIAL_ID: u64 = 0x7472_6964;

/// Dispatch on `spec.kind`. Records come back sorted by `trial_id`.
pub fn build_suite(spec: &SuiteSpec) -> Result<Vec<TrialRecord>, ForgeError> {
    match spec.kind {
        SuiteKind::Quality => build_quality_suite(spec),
        SuiteKind::Size => build_size_suite(spec),
        SuiteKind::Distractor => build_distractor_suite(spec),
        SuiteKind::Location => build_location_suite(spec),
        SuiteKind::BoundaryCut => build_boundary_cut_suite(spec),
    }
}

struct Ctx<'a> {
    spec: &'a SuiteSpec,
    suite_hash: u64,
    canvas: (u32, u32),
    records: Vec<TrialRecord>,
}

impl<'a> Ctx<'a> {
    fn new(spec: &'a SuiteSpec, kind: SuiteKind) -> Result<Self, ForgeError> {
        if spec.kind != kind {
            return Err(ForgeError::WrongKind { expected: kind, got: spec.kind });
        }
        Ok(Ctx { spec, suite_hash: hash_str(&spec.suite_id()), canvas: spec.profile.resolution, records: Vec::new() })
    }

    /// The number for trial `index` of tier `digits`. Independent of the swept
    /// parameter, so every cell of a tier reads the same numbers.
    fn number(&self, digits: u32, index: u32) -> String {
        let seed = derive_seed(&[self.spec.master_seed, hash_str(self.spec.kind.as_str()), SALT_NUMBER, u64::from(digits), u64::from(index)]);
        draw_number(seed, digits)
    }

    fn layout_seed(&self, cell: &[u64], index: u32, rep: u32) -> u64 {
        let mut parts = vec![self.spec.master_seed, hash_str(self.spec.kind.as_str()), SALT_LAYOUT];
        parts.extend_from_slice(cell);
        parts.extend([u64::from(index), u64::from(rep)]);
        derive_seed(&parts)
    }

    fn push(&mut self, cell_key: &[u64], cell: CellParams, ground_truth: String, placements: Vec<Placement>) {
        let mut parts = vec![self.suite_hash, SALT_TRIAL_ID];
        parts.extend_from_slice(cell_key);
        let trial_id = format!("{}-{:016x}", self.spec.kind, derive_seed(&parts));
        self.records.push(TrialRecord {
            image: TrialRecord::image_path_for(self.spec.kind, &trial_id),
            trial_id,
            suite: self.spec.kind,
            params: TrialParams { canvas: self.canvas, cell },
            ground_truth,
            prompt: self.spec.prompt_template.clone(),
            placements,
        });
    }

    fn finish(mut self) -> Result<Vec<TrialRecord>, ForgeError> {
        self.records.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
        if let Some(w) = self.records.windows(2).find(|w| w[0].trial_id == w[1].trial_id) {
            return Err(ForgeError::DuplicateTrialId(w[0].trial_id.clone()));
        }
        Ok(self.records)
    }

    fn centered(&self, text: &str, rate: u32) -> Result<Rect, ForgeError> {
        let (w, h) = measure_text(text, rate)?;
        let (cw, ch) = self.canvas;
        if w > cw || h > ch {
            return Err(ForgeError::TextTooLarge { bbox: Rect::new(0, 0, w, h), width: cw, height: ch });
        }
        Ok(Rect::new((cw - w) / 2, (ch - h) / 2, w, h))
    }
}

fn target(text: String, bbox: Rect) -> Placement {
    Placement { label: Some("a".into()), text, bbox }
}

/// A value with `digits` digits different from `avoid`.
fn distinct_value<R: Rng>(rng: &mut R, digits: u32, avoid: &str) -> String {
    loop {
        let v = draw_number_with(rng, digits);
        if v != avoid {
            return v;
        }
    }
}

/// Render at the suite's render rate, then degrade to each sampling rate.
pub fn build_quality_suite(spec: &SuiteSpec) -> Result<Vec<TrialRecord>, ForgeError> {
    let mut ctx = Ctx::new(spec, SuiteKind::Quality)?;
    let ParamGrid::SamplingRates(rates) = &spec.param_grid else {
        return Err(ForgeError::WrongGrid { suite: spec.kind });
    };
    let render_rate = spec.render_rate;
    for &digits in &spec.digit_tiers {
        for index in 0..spec.trials_per_cell {
            let number = ctx.number(digits, index);
            let bbox = ctx.centered(&number, render_rate)?;
            for &rate in rates {
                ScaleFactor::new(render_rate, rate)?;
                let cell = CellParams::Quality { sampling_rate: rate, render_rate, digits, number_index: index };
                let key = [u64::from(rate), u64::from(digits), u64::from(index)];
                ctx.push(&key, cell, number.clone(), vec![Placement { label: None, text: number.clone(), bbox }]);
            }
        }
    }
    ctx.finish()
}


/// One axis of the size crop: `(crop_origin, crop_len, out_start, out_end)`.
///
/// The origin is the aligned position nearest the centred one, so the text
/// offset inside the crop is a multiple of `f.den()` and the enlarged edges
/// fall on whole pixels.
fn size_axis(t: u32, len: u32, span: u32, f: ScaleFactor) -> Option<(u32, u32, u32, u32)> {
    let crop = f.blocks_for(span).min(span);
    let den = i64::from(f.den());
    let ideal = i64::from((span - crop) / 2);
    let steps = (2 * (i64::from(t) - ideal) + den).div_euclid(2 * den);
    let mut origin = i64::from(t) - den * steps;
    while origin + i64::from(crop) > i64::from(span) {
        origin -= den;
    }
    while origin < 0 {
        origin += den;
    }
    let origin = u32::try_from(origin).ok()?;
    if t < origin || t + len > origin + crop {
        return None;
    }
    let up = |v: u32| (u64::from(v) * u64::from(f.num())).div_ceil(u64::from(f.den())) as u32;
    let (start, end) = (up(t - origin), up(t + len - origin));
    (end <= span).then_some((origin, crop, start, end))
}

/// Crop a centred region of a centred base render and enlarge it back to the
/// canvas, scaling the text while keeping its sampling rate.
pub fn build_size_suite(spec: &SuiteSpec) -> Result<Vec<TrialRecord>, ForgeError> {
    let mut ctx = Ctx::new(spec, SuiteKind::Size)?;
    let ParamGrid::Scales(scales) = &spec.param_grid else {
        return Err(ForgeError::WrongGrid { suite: spec.kind });
    };
    let base_rate = spec.rate();
    let (cw, ch) = ctx.canvas;
    for &digits in &spec.digit_tiers {
        for index in 0..spec.trials_per_cell {
            let number = ctx.number(digits, index);
            let base = ctx.centered(&number, base_rate)?;
            for &scale in scales {
                let f = ScaleFactor::from_f64(scale)?;
                let too_large = || ForgeError::TextLargerThanCrop { text: number.clone(), w: base.w, h: base.h, scale, canvas_w: cw, canvas_h: ch };
                let (cx, crop_w, x0, x1) = size_axis(base.x, base.w, cw, f).ok_or_else(too_large)?;
                let (cy, crop_h, y0, y1) = size_axis(base.y, base.h, ch, f).ok_or_else(too_large)?;
                let cell = CellParams::Size { scale, base_rate, digits, number_index: index, base_bbox: base, crop: Rect::new(cx, cy, crop_w, crop_h) };
                let key = [(scale * 100.0).round() as u64, u64::from(digits), u64::from(index)];
                let bbox = Rect::new(x0, y0, x1 - x0, y1 - y0);
                ctx.push(&key, cell, number.clone(), vec![Placement { label: None, text: number.clone(), bbox }]);
            }
        }
    }
    ctx.finish()
}

fn padded_overlap(a: &Rect, b: &Rect) -> bool {
    let (ax0, ay0, ax1, ay1) = a.padded(PLACEMENT_PAD);
    ax0 < i64::from(b.right()) && i64::from(b.x) < ax1 && ay0 < i64::from(b.bottom()) && i64::from(b.y) < ay1
}

/// Target `a=NNN` centred, `k` labelled distractors at random free positions.
pub fn build_distractor_suite(spec: &SuiteSpec) -> Result<Vec<TrialRecord>, ForgeError> {
    let mut ctx = Ctx::new(spec, SuiteKind::Distractor)?;
    let ParamGrid::DistractorCounts(counts) = &spec.param_grid else {
        return Err(ForgeError::WrongGrid { suite: spec.kind });
    };
    let (cw, ch) = ctx.canvas;
    for &font in &spec.font_sizes {
        for &k in counts {
            if k as usize >= LABELS.len() {
                return Err(ForgeError::PlacementFailure { index: k, count: k, attempts: 0 });
            }
            for &digits in &spec.digit_tiers {
                for index in 0..spec.trials_per_cell {
                    let number = ctx.number(digits, index);
                    let text = format!("a={number}");
                    let bbox = ctx.centered(&text, font)?;
                    for rep in 0..spec.reps {
                        let cell_key = [u64::from(font), u64::from(k), u64::from(digits)];
                        let mut rng = rng_for(ctx.layout_seed(&cell_key, index, rep));
                        let mut placements = vec![target(text.clone(), bbox)];
                        for j in 1..=k {
                            let value = distinct_value(&mut rng, digits, &number);
                            let label = LABELS[j as usize];
                            let dtext = format!("{label}={value}");
                            let (w, h) = measure_text(&dtext, font)?;
                            if w > cw || h > ch {
                                return Err(ForgeError::TextTooLarge { bbox: Rect::new(0, 0, w, h), width: cw, height: ch });
                            }
                            let spot = (0..PLACEMENT_ATTEMPTS)
                                .map(|_| Rect::new(rng.random_range(0..=cw - w), rng.random_range(0..=ch - h), w, h))
                                .find(|r| placements.iter().all(|p| !padded_overlap(&p.bbox, r)))
                                .ok_or(ForgeError::PlacementFailure { index: j, count: k, attempts: PLACEMENT_ATTEMPTS })?;
                            placements.push(Placement { label: Some(label.to_string()), text: dtext, bbox: spot });
                        }
                        let cell = CellParams::Distractor { distractors: k, font_size: font, digits, number_index: index, rep };
                        let key = [u64::from(font), u64::from(k), u64::from(digits), u64::from(index), u64::from(rep)];
                        ctx.push(&key, cell, number.clone(), placements);
                    }
                }
            }
        }
    }
    ctx.finish()
}

/// Target centred in every cell of the (merged) grid, optionally with
/// distractors centred in uniformly chosen other cells.
pub fn build_location_suite(spec: &SuiteSpec) -> Result<Vec<TrialRecord>, ForgeError> {
    let mut ctx = Ctx::new(spec, SuiteKind::Location)?;
    let ParamGrid::DistractorVariants(variants) = &spec.param_grid else {
        return Err(ForgeError::WrongGrid { suite: spec.kind });
    };
    let profile = &spec.profile;
    let rate = spec.rate();
    let (rows, cols) = profile.grid;
    let cells = profile.cell_count();
    for &k in variants {
        if k >= cells || k as usize >= LABELS.len() {
            return Err(ForgeError::NotEnoughCells { needed: k + 1, available: cells.min(LABELS.len() as u32) });
        }
        for &digits in &spec.digit_tiers {
            for index in 0..spec.trials_per_cell {
                let number = ctx.number(digits, index);
                let text = format!("a={number}");
                let (w, h) = measure_text(&text, rate)?;
                for row in 0..rows {
                    for col in 0..cols {
                        let anchor = cell_center_anchor(profile, row, col, w, h)?;
                        let mut placements = vec![target(text.clone(), Rect::new(anchor.0, anchor.1, w, h))];
                        let cell_key = [u64::from(k), u64::from(digits), u64::from(row), u64::from(col)];
                        let mut rng = rng_for(ctx.layout_seed(&cell_key, index, 0));
                        let here = row * cols + col;
                        // sample from the other cells: indices past `here` shift by one
                        let picks = index::sample(&mut rng, (cells - 1) as usize, k as usize);
                        for (j, pick) in picks.iter().enumerate() {
                            let pick = pick as u32;
                            let other = if pick >= here { pick + 1 } else { pick };
                            let label = LABELS[j + 1];
                            let dtext = format!("{label}={}", distinct_value(&mut rng, digits, &number));
                            let (dw, dh) = measure_text(&dtext, rate)?;
                            let (dx, dy) = cell_center_anchor(profile, other / cols, other % cols, dw, dh)?;
                            placements.push(Placement { label: Some(label.to_string()), text: dtext, bbox: Rect::new(dx, dy, dw, dh) });
                        }
                        let cell = CellParams::Location { row, col, grid: (rows, cols), cell_size: profile.patch_size, distractors: k, rate, digits, number_index: index };
                        let key = [u64::from(k), u64::from(digits), u64::from(row), u64::from(col), u64::from(index)];
                        ctx.push(&key, cell, number.clone(), placements);
                    }
                }
            }
        }
    }
    ctx.finish()
}

/// Slide the text across the full canvas along each axis, tagging every
/// position with its patch-boundary cut report.
pub fn build_boundary_cut_suite(spec: &SuiteSpec) -> Result<Vec<TrialRecord>, ForgeError> {
    let mut ctx = Ctx::new(spec, SuiteKind::BoundaryCut)?;
    let ParamGrid::Axes(axes) = &spec.param_grid else {
        return Err(ForgeError::WrongGrid { suite: spec.kind });
    };
    let profile = &spec.profile;
    let rate = spec.rate();
    let step = spec.step.max(1);
    for &axis in axes {
        for &digits in &spec.digit_tiers {
            for index in 0..spec.trials_per_cell {
                let number = ctx.number(digits, index);
                let centred = ctx.centered(&number, rate)?;
                let last = match axis {
                    Axis::Vertical => ctx.canvas.0 - centred.w,
                    Axis::Horizontal => ctx.canvas.1 - centred.h,
                };
                for position in (0..=last).step_by(step as usize) {
                    let bbox = match axis {
                        Axis::Vertical => Rect { x: position, ..centred },
                        Axis::Horizontal => Rect { y: position, ..centred },
                    };
                    let report = classify_cut(&bbox, profile, axis);
                    let cell = CellParams::BoundaryCut {
                        axis,
                        position,
                        rate,
                        digits,
                        number_index: index,
                        patch_size: profile.patch_size,
                        is_cut: report.is_cut,
                        range_ratio: report.range_ratio,
                        crossed_boundaries: report.crossed_boundaries,
                    };
                    let axis_word = match axis {
                        Axis::Vertical => 0,
                        Axis::Horizontal => 1,
                    };
                    let key = [axis_word, u64::from(position), u64::from(digits), u64::from(index)];
                    ctx.push(&key, cell, number.clone(), vec![Placement { label: None, text: number.clone(), bbox }]);
                }
            }
        }
    }
    ctx.finish()
}
