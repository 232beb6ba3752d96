//! SVG line plots of a metric against training-set size.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::lab::median;
use super::records::{read_metrics, MetricsRecord};
use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 32.0;
const BOTTOM: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Per-`n` summary of one (method, scheme) series across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesPoint {
    pub n: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

/// `"{method}/{scheme}" → points` sorted by `n`, for one metric.
pub fn summarize(records: &[MetricsRecord], metric: &str) -> BTreeMap<String, Vec<SeriesPoint>> {
    let mut groups: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.metric == metric) {
        groups.entry(format!("{}/{}", r.method, r.scheme)).or_default().entry(r.n).or_default().push(r.value);
    }
    groups
        .into_iter()
        .map(|(name, by_n)| {
            let pts = by_n
                .into_iter()
                .map(|(n, v)| SeriesPoint {
                    n,
                    median: median(&v),
                    min: v.iter().copied().fold(f64::INFINITY, f64::min),
                    max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                })
                .collect();
            (name, pts)
        })
        .collect()
}

/// Renders `metric` as an SVG document. The x axis is log-scaled; an
/// `n = 0` point sits on the left edge and is labelled 0. Each series is a
/// median line over a min-max band across seeds.
pub fn emit_plot(records: &[MetricsRecord], metric: &str) -> Result<String> {
    let series = summarize(records, metric);
    if series.is_empty() {
        return Err(Error::Plot(format!("no records for metric {metric}")));
    }
    let all: Vec<&SeriesPoint> = series.values().flatten().collect();
    let ns: Vec<usize> = {
        let mut v: Vec<usize> = all.iter().map(|p| p.n).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    if ns.len() < 2 {
        return Err(Error::Plot(format!("metric {metric} has fewer than 2 distinct n values")));
    }
    let positive: Vec<f64> = ns.iter().filter(|&&n| n > 0).map(|&n| (n as f64).log10()).collect();
    let has_zero = ns[0] == 0;
    let (lo, hi) = match (positive.first(), positive.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        (Some(&a), _) => (a - 0.5, a + 0.5),
        _ => return Err(Error::Plot("no positive n values".into())),
    };
    // n = 0 sits left of the smallest positive n.
    let span = hi - lo;
    let x_lo = if has_zero { lo - span * 0.15 } else { lo };
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let xpos = |n: usize| -> f64 {
        let v = if n == 0 { x_lo } else { (n as f64).log10() };
        LEFT + (v - x_lo) / (hi - x_lo) * plot_w
    };
    let mut y_min = all.iter().map(|p| p.min).fold(f64::INFINITY, f64::min);
    let mut y_max = all.iter().map(|p| p.max).fold(f64::NEG_INFINITY, f64::max);
    if !y_min.is_finite() || !y_max.is_finite() {
        return Err(Error::Plot(format!("metric {metric} has non-finite values")));
    }
    if y_max - y_min < 1e-9 {
        y_min -= 0.5;
        y_max += 0.5;
    }
    let pad = (y_max - y_min) * 0.05;
    let (y_min, y_max) = (y_min - pad, y_max + pad);
    let ypos = |v: f64| TOP + (y_max - v) / (y_max - y_min) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.2}" y="20" text-anchor="middle">{metric}</text>"#, LEFT + plot_w / 2.0);
    let (x0, x1, y0, y1) = (LEFT, LEFT + plot_w, TOP, TOP + plot_h);
    let _ = writeln!(
        s,
        r#"<path d="M{x0:.2},{y0:.2} L{x0:.2},{y1:.2} L{x1:.2},{y1:.2}" fill="none" stroke="black"/>"#
    );
    for &n in &ns {
        let x = xpos(n);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{y1:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{n}</text>"#,
            y1 + 4.0,
            y1 + 18.0
        );
    }
    for i in 0..=4 {
        let v = y_min + (y_max - y_min) * i as f64 / 4.0;
        let y = ypos(v);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            x0 - 4.0,
            x0 - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">n</text>"#, LEFT + plot_w / 2.0, HEIGHT - 8.0);

    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let upper: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", xpos(p.n), ypos(p.max))).collect();
        let lower: Vec<String> = pts.iter().rev().map(|p| format!("{:.2},{:.2}", xpos(p.n), ypos(p.min))).collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", xpos(p.n), ypos(p.median))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
        for p in pts {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, xpos(p.n), ypos(p.median));
        }
        let ly = TOP + 16.0 * i as f64 + 8.0;
        let lx = WIDTH - RIGHT + 16.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{name}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Reads a metrics file and writes the plot for `metric` to `out`.
pub fn plot_file(metrics: impl AsRef<Path>, metric: &str, out: impl AsRef<Path>) -> Result<()> {
    let records = read_metrics(metrics)?;
    let svg = emit_plot(&records, metric)?;
    let out = out.as_ref();
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(out, svg).map_err(|e| Error::io(out, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(scheme: &str, n: usize, seed: u64, value: f64) -> MetricsRecord {
        MetricsRecord {
            experiment: "effectiveness".into(),
            method: "sft".into(),
            scheme: scheme.into(),
            m: 0,
            n,
            seed,
            metric: "exact_match".into(),
            value,
            wall_time: 0.0,
        }
    }

    #[test]
    fn summary_takes_median_and_range() {
        let recs = vec![rec("vanilla", 100, 0, 0.1), rec("vanilla", 100, 1, 0.3), rec("vanilla", 100, 2, 0.2)];
        let s = summarize(&recs, "exact_match");
        assert_eq!(s["sft/vanilla"], vec![SeriesPoint { n: 100, median: 0.2, min: 0.1, max: 0.3 }]);
    }

    #[test]
    fn plot_is_deterministic_and_labels_zero() {
        let recs = vec![rec("vanilla", 0, 0, 0.4), rec("vanilla", 100, 0, 0.1), rec("d2lora", 100, 0, 0.2), rec("d2lora", 1000, 0, 0.3)];
        let a = emit_plot(&recs, "exact_match").unwrap();
        assert_eq!(a, emit_plot(&recs, "exact_match").unwrap());
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains(">0</text>") && a.contains("sft/d2lora"));
    }

    #[test]
    fn degenerate_inputs_are_plot_errors() {
        assert!(matches!(emit_plot(&[], "exact_match"), Err(Error::Plot(_))));
        assert!(matches!(emit_plot(&[rec("vanilla", 100, 0, 0.1)], "exact_match"), Err(Error::Plot(_))));
        assert!(matches!(emit_plot(&[rec("vanilla", 100, 0, 0.1)], "rougeL_f1"), Err(Error::Plot(_))));
    }
}
