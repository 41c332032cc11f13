//! Minimal SVG charts for report output.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{CurvePoint, HeatmapCell};

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Line chart of mean GPM against the swept parameter, one line per series,
/// with the bootstrap interval drawn as whiskers.
pub fn curve_svg(points: &[CurvePoint], title: &str) -> String {
    let (w, h, m) = (640.0, 400.0, 50.0);
    let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.value), b.max(p.value)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let px = |v: f64| m + (v - lo) / span * (w - 2.0 * m);
    let py = |g: f64| h - m - g.clamp(0.0, 1.0) * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(s, r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - m, w - m, h - m);
    let _ = writeln!(s, r#"<line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#, h - m);
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{tick}</text>"#, m - 4.0, py(tick) + 4.0);
    }
    let mut series: BTreeMap<&str, Vec<&CurvePoint>> = BTreeMap::new();
    for p in points {
        series.entry(&p.series).or_default().push(p);
    }
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|p| format!("{:.1},{:.1}", px(p.value), py(p.mean))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, path.join(" "));
        for p in pts {
            let _ = writeln!(s, r#"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="{color}"/>"#, px(p.value), py(p.ci_low), py(p.ci_high));
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{color}">{}</text>"#, w - m + 4.0 - 100.0, m + 16.0 * i as f64, escape(name));
    }
    if let Some(p) = points.first() {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 12.0, escape(&p.param));
    }
    s.push_str("</svg>\n");
    s
}

/// Grid of cells shaded by mean GPM, lighter for higher values.
pub fn heatmap_svg(cells: &[HeatmapCell], rows: u32, cols: u32, title: &str) -> String {
    let size = 24u32;
    let (w, h) = (cols * size + 20, rows * size + 40);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<text x="10" y="16">{}</text>"#, escape(title));
    for c in cells {
        let v = (c.mean.clamp(0.0, 1.0) * 255.0).round() as u8;
        let _ = writeln!(
            s,
            r##"<rect x="{}" y="{}" width="{size}" height="{size}" fill="#{v:02x}{v:02x}{v:02x}"><title>({}, {}) {:.3} n={}</title></rect>"##,
            10 + c.col * size,
            30 + c.row * size,
            c.row,
            c.col,
            c.mean,
            c.n
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_well_formed_documents() {
        let p = CurvePoint {
            series: "digits=3".into(),
            param: "sampling_rate".into(),
            value: 2.0,
            mean: 0.5,
            n: 2,
            errors: 0,
            ci_low: 0.0,
            ci_high: 1.0,
            inclusion: 0.5,
            exact: 0.5,
        };
        let svg = curve_svg(&[p.clone(), CurvePoint { value: 4.0, mean: 1.0, ..p }], "q<1>");
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("q&lt;1&gt;"));
        let cells = [HeatmapCell { distractors: 0, row: 1, col: 2, mean: 1.0, n: 3, errors: 0 }];
        assert!(heatmap_svg(&cells, 4, 4, "h").contains(r##"fill="#ffffff""##));
    }
}
