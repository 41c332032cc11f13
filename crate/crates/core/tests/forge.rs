use std::collections::BTreeSet;

use visprobe_core::forge::{self, build_suite, render_trial, CellParams, ParamGrid, SuiteKind, SuiteSpec, TrialRecord};
use visprobe_core::patch::{Axis, ProfileRegistry};
use visprobe_core::raster::{self, GrayImage, Rect};

fn spec(kind: SuiteKind, profile: &str) -> SuiteSpec {
    let reg = ProfileRegistry::builtin();
    SuiteSpec::defaults(kind, reg.get(profile).unwrap(), 7)
}

fn small(kind: SuiteKind, profile: &str, trials: u32) -> SuiteSpec {
    SuiteSpec { trials_per_cell: trials, ..spec(kind, profile) }
}

fn disjoint(a: &Rect, b: &Rect) -> bool {
    a.right() <= b.x || b.right() <= a.x || a.bottom() <= b.y || b.bottom() <= a.y
}

#[test]
fn full_suite_cardinalities() {
    assert_eq!(build_suite(&spec(SuiteKind::Quality, "blip2")).unwrap().len(), 10 * 3 * 500);
    assert_eq!(build_suite(&spec(SuiteKind::Size, "blip2")).unwrap().len(), 10 * 3 * 500);
    assert_eq!(build_suite(&spec(SuiteKind::Distractor, "blip2")).unwrap().len(), 10 * 2 * 100 * 5);
}

#[test]
fn location_grids() {
    let blip = build_suite(&small(SuiteKind::Location, "blip2", 1)).unwrap();
    assert_eq!(blip.len(), 64 * 2);
    let fuyu = build_suite(&small(SuiteKind::Location, "fuyu-8b", 1)).unwrap();
    assert_eq!(fuyu.len(), 100 * 2);
    let qwen = spec(SuiteKind::Location, "qwen-vl-chat");
    assert_eq!(qwen.param_grid, ParamGrid::DistractorVariants(vec![0, 9]));
    for rec in &blip {
        let CellParams::Location { distractors, .. } = rec.params.cell else { panic!() };
        assert_eq!(rec.placements.len() as u32, distractors + 1);
        // every placement sits in its own 28-px cell
        let cells: BTreeSet<_> = rec.placements.iter().map(|p| (p.bbox.x / 28, p.bbox.y / 28)).collect();
        assert_eq!(cells.len(), rec.placements.len());
        for p in &rec.placements {
            assert_eq!(p.bbox.x / 28, (p.bbox.right() - 1) / 28);
        }
    }
}

#[test]
fn boundary_digits_and_ratios() {
    for (profile, digits) in [("blip2", 3), ("llava-1.5", 3), ("fuyu-8b", 6)] {
        let s = small(SuiteKind::BoundaryCut, profile, 1);
        assert_eq!(s.digit_tiers, vec![digits], "{profile}");
        let recs = build_suite(&s).unwrap();
        for axis in [Axis::Vertical, Axis::Horizontal] {
            let mut sweep: Vec<_> = recs
                .iter()
                .filter_map(|r| match &r.params.cell {
                    CellParams::BoundaryCut { axis: a, position, is_cut, range_ratio, .. } if *a == axis => Some((*position, *is_cut, *range_ratio, r.placements[0].bbox)),
                    _ => None,
                })
                .collect();
            sweep.sort_by_key(|s| s.0);
            assert_eq!(sweep.first().unwrap().2, 0.0);
            assert_eq!(sweep.last().unwrap().2, 1.0);
            let p = s.profile.patch_size;
            for (pos, cut, _, bbox) in &sweep {
                // brute force: do two interior neighbouring pixels fall in different patches?
                let (start, len) = match axis {
                    Axis::Vertical => (bbox.x, bbox.w),
                    Axis::Horizontal => (bbox.y, bbox.h),
                };
                let oracle = (start..start + len - 1).any(|v| v / p != (v + 1) / p);
                assert_eq!(*cut, oracle, "{profile} {axis:?} at {pos}");
            }
            let w = sweep[0].3;
            let span = match axis {
                Axis::Vertical => s.profile.width() - w.w,
                Axis::Horizontal => s.profile.height() - w.h,
            };
            assert_eq!(sweep.len() as u32, span + 1);
        }
    }
}

#[test]
fn quality_rate_20_is_direct_render_and_rate_10_is_blocky() {
    let recs = build_suite(&small(SuiteKind::Quality, "blip2", 2)).unwrap();
    for rec in &recs {
        let CellParams::Quality { sampling_rate, .. } = rec.params.cell else { panic!() };
        let img = render_trial(rec).unwrap();
        let p = &rec.placements[0];
        let mut direct = GrayImage::white(224, 224).unwrap();
        raster::render_text(&mut direct, &p.text, 20, (p.bbox.x, p.bbox.y)).unwrap();
        if sampling_rate == 20 {
            assert_eq!(img, direct);
        }
        // nothing outside the text box changes
        for y in 0..224 {
            for x in 0..224 {
                if !p.bbox.contains(x, y) {
                    assert_eq!(img.get(x, y), 255);
                }
            }
        }
        if sampling_rate == 10 {
            for y in (0..p.bbox.h).step_by(2) {
                for x in (0..p.bbox.w).step_by(2) {
                    let (ax, ay) = (p.bbox.x + x, p.bbox.y + y);
                    let v = img.get(ax, ay);
                    for (dx, dy) in [(1, 0), (0, 1), (1, 1)] {
                        if x + dx < p.bbox.w && y + dy < p.bbox.h {
                            assert_eq!(img.get(ax + dx, ay + dy), v);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn size_scale_one_is_base_and_scale_three_is_nine_times_ink() {
    let recs = build_suite(&small(SuiteKind::Size, "blip2", 3)).unwrap();
    let base_dark = |rec: &TrialRecord| {
        let CellParams::Size { base_bbox, .. } = rec.params.cell else { panic!() };
        let mut img = GrayImage::white(224, 224).unwrap();
        raster::render_text(&mut img, &rec.placements[0].text, 8, (base_bbox.x, base_bbox.y)).unwrap();
        img
    };
    for rec in &recs {
        let CellParams::Size { scale, .. } = rec.params.cell else { panic!() };
        let img = render_trial(rec).unwrap();
        let base = base_dark(rec);
        if scale == 1.0 {
            assert_eq!(img, base);
        }
        if scale == 3.0 {
            assert_eq!(img.dark_count(128), 9 * base.dark_count(128));
        }
        // text height follows the scale exactly; the ink never leaves its box
        let bbox = rec.placements[0].bbox;
        assert_eq!(bbox.h, (8.0 * scale).round() as u32, "scale {scale}");
        let ink = img.ink_bbox(128).unwrap();
        assert!(bbox.contains_rect(&ink), "scale {scale}: {ink:?} outside {bbox:?}");
        assert_eq!(ink.h, bbox.h);
    }
}

#[test]
fn distractor_layouts_are_disjoint_and_labelled() {
    let recs = build_suite(&small(SuiteKind::Distractor, "blip2", 10)).unwrap();
    for rec in &recs {
        let CellParams::Distractor { distractors, .. } = rec.params.cell else { panic!() };
        assert_eq!(rec.placements.len() as u32, distractors + 1);
        assert_eq!(rec.target().unwrap().text, format!("a={}", rec.ground_truth));
        for (i, p) in rec.placements.iter().enumerate() {
            let label = char::from(b'a' + i as u8).to_string();
            assert_eq!(p.label.as_deref(), Some(label.as_str()));
            assert!(p.bbox.fits_in(224, 224));
            assert!(p.text.starts_with(&format!("{label}=")));
            if i > 0 {
                assert_ne!(&p.text[2..], rec.ground_truth);
            }
            for q in &rec.placements[..i] {
                assert!(disjoint(&p.bbox, &q.bbox));
            }
        }
        if distractors == 0 {
            let b = rec.placements[0].bbox;
            assert_eq!((b.x, b.y), ((224 - b.w) / 2, (224 - b.h) / 2));
        }
    }
}

#[test]
fn numbers_are_shared_across_cells_and_fonts() {
    let recs = build_suite(&small(SuiteKind::Distractor, "blip2", 4)).unwrap();
    let mut by_index = std::collections::BTreeMap::<u32, BTreeSet<String>>::new();
    for rec in &recs {
        let CellParams::Distractor { number_index, .. } = rec.params.cell else { panic!() };
        by_index.entry(number_index).or_default().insert(rec.ground_truth.clone());
    }
    assert!(by_index.values().all(|s| s.len() == 1));
}

#[test]
fn building_is_deterministic_and_seed_sensitive() {
    let a = build_suite(&small(SuiteKind::Distractor, "blip2", 3)).unwrap();
    let b = build_suite(&small(SuiteKind::Distractor, "blip2", 3)).unwrap();
    assert_eq!(a, b);
    let other = SuiteSpec { master_seed: 8, ..small(SuiteKind::Distractor, "blip2", 3) };
    assert_ne!(a, build_suite(&other).unwrap());
    // adding trials does not disturb existing ones
    let more = build_suite(&small(SuiteKind::Distractor, "blip2", 5)).unwrap();
    for rec in &a {
        assert!(more.contains(rec));
    }
}

#[test]
fn manifest_round_trip_reproduces_pngs() {
    let dir = tempfile::tempdir().unwrap();
    let mut recs = Vec::new();
    for kind in SuiteKind::all() {
        let mut s = small(kind, "blip2", 1);
        if let ParamGrid::Axes(_) = s.param_grid {
            s.step = 37;
        }
        recs.extend(build_suite(&s).unwrap());
    }
    let path = forge::write_suite(dir.path(), &recs, true).unwrap();
    let back = forge::read_manifest(&path).unwrap();
    assert_eq!(back.len(), recs.len());
    let ids: Vec<_> = back.iter().map(|r| r.trial_id.clone()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    for rec in &back {
        assert!(recs.contains(rec));
        assert_eq!(rec.image, format!("images/{}/{}.png", rec.suite, rec.trial_id));
        let png = std::fs::read(dir.path().join(&rec.image)).unwrap();
        assert_eq!(GrayImage::from_png(&png).unwrap(), render_trial(rec).unwrap());
    }
    // a second write is byte-identical
    let first = std::fs::read(&path).unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    let again = forge::write_suite(dir2.path(), &recs, false).unwrap();
    assert_eq!(first, std::fs::read(again).unwrap());
}

#[test]
fn manifest_line_has_documented_fields() {
    let rec = &build_suite(&small(SuiteKind::Distractor, "blip2", 1)).unwrap()[0];
    let v: serde_json::Value = serde_json::from_str(&rec.to_json_line()).unwrap();
    for key in ["trial_id", "suite", "params", "ground_truth", "prompt", "placements", "image"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    let bbox = &v["placements"][0]["bbox"];
    assert_eq!(bbox.as_array().unwrap().len(), 4);
    assert_eq!(v["params"]["kind"], "distractor");
}

#[test]
fn wrong_kind_is_rejected() {
    let s = spec(SuiteKind::Quality, "blip2");
    assert!(forge::build_size_suite(&s).is_err());
}
