//! Learning-curve plots: one panel per perspective, seed mean as a line and
//! one standard deviation as a shaded band.

use std::collections::BTreeMap;
use std::fmt::Write;

use alqa_core::acquisition::StrategyKind;

use crate::analysis::RunSummary;

const W: f64 = 560.0;
const H: f64 = 320.0;
const LEFT: f64 = 56.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 44.0;

fn color(strategy: StrategyKind, i: usize) -> &'static str {
    const EXTRA: [&str; 4] = ["#1f77b4", "#2ca02c", "#9467bd", "#8c564b"];
    match (strategy, i) {
        (StrategyKind::DealUncertainty, 0) => "#c0392b",
        (StrategyKind::UniformRandom, 0) => "#222222",
        _ => EXTRA[i % EXTRA.len()],
    }
}

pub fn learning_curves(runs: &[RunSummary]) -> String {
    let mut panels: BTreeMap<String, Vec<&RunSummary>> = BTreeMap::new();
    for r in runs {
        let key = r.perspective.map_or_else(|| "unknown".to_owned(), |p| p.to_string());
        panels.entry(key).or_default().push(r);
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{}" font-family="sans-serif" font-size="11">"#,
        H * panels.len() as f64
    );
    for (i, (name, runs)) in panels.iter().enumerate() {
        panel(&mut out, name, runs, i as f64 * H);
    }
    out.push_str("</svg>\n");
    out
}

fn panel(out: &mut String, name: &str, runs: &[&RunSummary], y_off: f64) {
    let points = runs.iter().flat_map(|r| r.mean.iter());
    let (mut x0, mut x1, mut lo) = (f64::INFINITY, f64::NEG_INFINITY, 1.0f64);
    for p in points {
        x0 = x0.min(p.labeled_count);
        x1 = x1.max(p.labeled_count);
        lo = lo.min(p.f2_mean - p.f2_std);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let y0 = (lo.max(0.0) * 10.0).floor() / 10.0;
    let y0 = if y0 >= 1.0 { 0.9 } else { y0 };
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| y_off + TOP + (1.0 - (y.clamp(y0, 1.0) - y0) / (1.0 - y0)) * ph;

    let _ = writeln!(out, r#"<text x="{LEFT}" y="{}" font-weight="bold">{name}</text>"#, y_off + 18.0);
    let _ = writeln!(
        out,
        r##"<rect x="{LEFT}" y="{}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>"##,
        y_off + TOP
    );
    for k in 0..=5 {
        let v = y0 + (1.0 - y0) * k as f64 / 5.0;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            LEFT - 4.0,
            sy(v) + 4.0
        );
    }
    for k in 0..=4 {
        let v = x0 + (x1 - x0) * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{v:.0}</text>"#,
            sx(v),
            y_off + H - BOTTOM + 14.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">labeled images</text>"#,
        LEFT + pw / 2.0,
        y_off + H - 8.0
    );

    for (i, r) in runs.iter().enumerate() {
        let c = color(r.strategy, i);
        let upper: Vec<String> = r
            .mean
            .iter()
            .map(|p| format!("{:.1},{:.1}", sx(p.labeled_count), sy(p.f2_mean + p.f2_std)))
            .collect();
        let lower: Vec<String> = r
            .mean
            .iter()
            .rev()
            .map(|p| format!("{:.1},{:.1}", sx(p.labeled_count), sy(p.f2_mean - p.f2_std)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polygon points="{} {}" fill="{c}" fill-opacity="0.15" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = r
            .mean
            .iter()
            .map(|p| format!("{:.1},{:.1}", sx(p.labeled_count), sy(p.f2_mean)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#,
            line.join(" ")
        );
        let ly = y_off + TOP + 12.0 + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{ly}" fill="{c}">{}</text>"#,
            W - RIGHT + 10.0,
            r.strategy.as_str()
        );
    }
}
