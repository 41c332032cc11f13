use std::collections::BTreeMap;

use visprobe_core::adapters::{Backend, Probe, TemplateOcr};
use visprobe_core::forge::{build_suite, render_trial, CellParams, SuiteKind, SuiteSpec};
use visprobe_core::metrics::{GpmInput, MatchResult};
use visprobe_core::patch::ProfileRegistry;

fn cell_means(seed: u64) -> BTreeMap<(u32, u32), f64> {
    let reg = ProfileRegistry::builtin();
    let spec = SuiteSpec { trials_per_cell: 50, ..SuiteSpec::defaults(SuiteKind::Quality, reg.get("blip2").unwrap(), seed) };
    let mut by_cell: BTreeMap<(u32, u32), Vec<f64>> = BTreeMap::new();
    for rec in build_suite(&spec).unwrap() {
        let CellParams::Quality { sampling_rate, digits, .. } = rec.params.cell else { panic!("not a quality trial") };
        let img = render_trial(&rec).unwrap();
        let reply = TemplateOcr.ask(&Probe { trial: &rec, image: &img }).unwrap();
        let m = MatchResult::score(&reply.text, &[&rec.ground_truth], GpmInput::AnswerToken);
        by_cell.entry((digits, sampling_rate)).or_default().push(m.gpm);
    }
    by_cell.into_iter().map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64)).collect()
}

#[test]
fn ocr_degrades_with_sampling_rate() {
    for seed in [11, 12, 13] {
        let mean = cell_means(seed);
        for d in [3, 5, 7] {
            assert!(mean[&(d, 20)] > mean[&(d, 2)], "seed {seed} digits {d}");
        }
        for r in [8, 10, 12, 14, 16, 18, 20] {
            assert_eq!(mean[&(3, r)], 1.0, "seed {seed} rate {r}");
        }
    }
}
