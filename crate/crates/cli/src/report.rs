//! SVG rendering of aggregated curves. Every number drawn comes straight
//! from the curve points; nothing is recomputed here.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use spirit_core::harness::CurvePoint;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: (f64, f64, f64, f64) = (60.0, 150.0, 40.0, 50.0); // left, right, top, bottom
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    /// `(x, mean, ci_low, ci_high)`
    pub points: Vec<(f64, f64, f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Labels for categorical x positions.
    pub x_names: Option<Vec<String>>,
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

pub fn render(chart: &Chart) -> String {
    let (ml, mr, mt, mb) = MARGIN;
    let (pw, ph) = (WIDTH - ml - mr, HEIGHT - mt - mb);
    let xs = chart.series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (x0, x1) = match chart.x_names {
        Some(ref n) => (-0.5, n.len() as f64 - 0.5),
        None => span(xs),
    };
    let (y0, y1) = span(chart.series.iter().flat_map(|s| s.points.iter().flat_map(|p| [p.2, p.3])));
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| mt + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="13">{}</text>"#, ml + pw / 2.0, escape(&chart.title));
    let _ = writeln!(s, r#"<line x1="{ml}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#, mt + ph, ml + pw, mt + ph);
    let _ = writeln!(s, r#"<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{:.1}" stroke="black"/>"#, mt + ph);

    for i in 0..=4 {
        let v = y0 + (y1 - y0) * f64::from(i) / 4.0;
        let y = sy(v);
        let _ = writeln!(s, r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##, ml, ml + pw);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, ml - 6.0, y + 4.0, tick_label(v));
    }
    let ticks: Vec<(f64, String)> = match &chart.x_names {
        Some(names) => names.iter().enumerate().map(|(i, n)| (i as f64, n.clone())).collect(),
        None => {
            let distinct: BTreeSet<u64> = chart.series.iter().flat_map(|s| s.points.iter().map(|p| p.0.to_bits())).collect();
            let mut v: Vec<f64> = distinct.into_iter().map(f64::from_bits).collect();
            v.sort_by(f64::total_cmp);
            v.into_iter().map(|x| (x, tick_label(x))).collect()
        }
    };
    for (x, label) in &ticks {
        let px = sx(*x);
        let _ = writeln!(s, r#"<line x1="{px:.1}" y1="{:.1}" x2="{px:.1}" y2="{:.1}" stroke="black"/>"#, mt + ph, mt + ph + 4.0);
        let _ = writeln!(s, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, mt + ph + 16.0, escape(label));
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, ml + pw / 2.0, HEIGHT - 12.0, escape(&chart.x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0,
        escape(&chart.y_label)
    );

    for (k, series) in chart.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut pts = series.points.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pts.len() >= 2 {
            let upper = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.3)));
            let lower = pts.iter().rev().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.2)));
            let poly: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, poly.join(" "));
            let line: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
        }
        for p in &pts {
            let (px, py) = (sx(p.0), sy(p.1));
            let _ = writeln!(s, r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="{color}"/>"#, sy(p.2), sy(p.3));
            let _ = writeln!(s, r#"<circle cx="{px:.2}" cy="{py:.2}" r="3" fill="{color}"/>"#);
        }
        let ly = mt + 14.0 + 18.0 * k as f64;
        let lx = ml + pw + 16.0;
        let _ = writeln!(s, r#"<rect x="{lx:.1}" y="{:.1}" width="12" height="12" fill="{color}"/>"#, ly - 10.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{ly:.1}">{}</text>"#, lx + 18.0, escape(&series.name));
    }
    s.push_str("</svg>\n");
    s
}

fn horizon_tag(h: Option<i64>) -> String {
    h.map(|m| format!("h{m}min")).unwrap_or_else(|| "overall".to_string())
}

/// One chart per (experiment, task, evaluation set, metric) and, for
/// curves over fine-tuning weeks, per horizon. Returns `(file name, svg)`.
pub fn charts(points: &[CurvePoint]) -> Vec<(String, String)> {
    let mut groups: BTreeMap<(&str, &str, &str, &str), Vec<&CurvePoint>> = BTreeMap::new();
    for p in points {
        groups.entry((p.kind.name(), p.task.name(), p.evaluated_on.as_str(), p.metric.as_str())).or_default().push(p);
    }
    let mut out = Vec::new();
    for ((kind, task, on, metric), pts) in groups {
        let variants: BTreeSet<&str> = pts.iter().map(|p| p.variant.as_str()).collect();
        let stem = format!("{kind}-{task}-{on}-{metric}");
        let y_label = if metric == "nmap" { "nMAP (%)".to_string() } else { metric.to_string() };
        let series_of = |keep: &dyn Fn(&CurvePoint) -> Option<f64>| -> Vec<Series> {
            variants
                .iter()
                .map(|v| Series {
                    name: v.to_string(),
                    points: pts
                        .iter()
                        .filter(|p| p.variant == *v)
                        .filter_map(|p| keep(p).map(|x| (x, p.mean, p.ci_low, p.ci_high)))
                        .collect(),
                })
                .filter(|s| !s.points.is_empty())
                .collect()
        };
        if pts.iter().any(|p| p.weeks.is_some()) {
            let horizons: BTreeSet<Option<i64>> = pts.iter().map(|p| p.horizon_minutes).collect();
            for h in horizons {
                let chart = Chart {
                    title: format!("{kind} {task} on {on}: {metric} ({})", horizon_tag(h)),
                    x_label: "fine-tuning weeks".into(),
                    y_label: y_label.clone(),
                    series: series_of(&|p| (p.horizon_minutes == h).then(|| p.weeks.unwrap_or(0) as f64)),
                    x_names: None,
                };
                out.push((format!("{stem}-{}.svg", horizon_tag(h)), render(&chart)));
            }
        } else if pts.iter().any(|p| p.horizon_minutes.is_some()) {
            let chart = Chart {
                title: format!("{kind} {task} on {on}: {metric} by horizon"),
                x_label: "horizon (minutes)".into(),
                y_label,
                series: series_of(&|p| p.horizon_minutes.map(|h| h as f64)),
                x_names: None,
            };
            out.push((format!("{stem}.svg"), render(&chart)));
        } else {
            let names: Vec<String> = variants.iter().map(|v| v.to_string()).collect();
            let chart = Chart {
                title: format!("{kind} {task} on {on}: {metric}"),
                x_label: "variant".into(),
                y_label,
                series: series_of(&|p| names.iter().position(|n| *n == p.variant).map(|i| i as f64)),
                x_names: Some(names.clone()),
            };
            out.push((format!("{stem}.svg"), render(&chart)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_renders_degenerate_band() {
        let chart = Chart {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![Series {
                name: "a".into(),
                points: vec![(1.0, 5.0, 5.0, 5.0)],
            }],
            x_names: None,
        };
        let svg = render(&chart);
        assert!(svg.starts_with("<svg"));
        assert!(!svg.contains("<polygon"));
        assert_eq!(svg.matches("<circle").count(), 1);
    }

    #[test]
    fn band_is_drawn_for_curves() {
        let chart = Chart {
            title: "a < b".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![Series {
                name: "s".into(),
                points: vec![(2.0, 3.0, 2.0, 4.0), (4.0, 2.0, 1.5, 2.5)],
            }],
            x_names: None,
        };
        let svg = render(&chart);
        assert_eq!(svg.matches("<polygon").count(), 1);
        assert!(svg.contains("a &lt; b"));
    }
}
