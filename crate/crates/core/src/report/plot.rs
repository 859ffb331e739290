//! Line plots of one metric across runs as standalone SVG.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{NtkError, Result};
use crate::runner::metrics::{read_metrics_csv, COLUMNS};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_Y: f64 = 40.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// One labelled series with its task-switch positions (x values).
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub switches: Vec<f64>,
}

pub fn plottable_metrics() -> &'static [&'static str] {
    &COLUMNS[3..]
}

fn label_for(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if stem == "metrics" {
        if let Some(dir) = path.parent().and_then(Path::file_name) {
            return dir.to_string_lossy().into_owned();
        }
    }
    stem
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick(v: f64) -> String {
    if v == 0.0 || (1e-2..1e4).contains(&v.abs()) {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

/// SVG text for `curves`; x is the probe step.
pub fn render_svg(curves: &[Curve], metric: &str) -> Result<String> {
    let finite = || curves.iter().flat_map(|c| c.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    if finite().next().is_none() {
        return Err(NtkError::Data(format!("no finite {metric} values to plot")));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in finite() {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        let pad = if y0 == 0.0 { 1.0 } else { 0.1 * y0.abs() };
        y0 -= pad;
        y1 += pad;
    }
    let pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let ph = HEIGHT - 2.0 * MARGIN_Y;
    let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_Y + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let w = &mut s;
    // writing to a String cannot fail
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(w, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        w,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_Y}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="13">{}</text>"#,
        MARGIN_LEFT + pw / 2.0,
        MARGIN_Y - 14.0,
        escape(metric)
    );
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">probe step</text>"#,
        MARGIN_LEFT + pw / 2.0,
        HEIGHT - 6.0
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(xv),
            MARGIN_Y + ph + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 6.0,
            sy(yv) + 4.0,
            tick(yv)
        );
    }
    let mut switches: Vec<f64> = curves.iter().flat_map(|c| c.switches.iter().copied()).collect();
    switches.sort_by(f64::total_cmp);
    switches.dedup();
    for x in switches {
        let _ = writeln!(
            w,
            r##"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="#555555" stroke-dasharray="4 3"/>"##,
            sx(x),
            MARGIN_Y,
            MARGIN_Y + ph
        );
    }
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        // break the line at missing or non-finite values
        let mut runs: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
        for &(x, y) in &c.points {
            if x.is_finite() && y.is_finite() {
                runs.last_mut().expect("nonempty").push((x, y));
            } else if !runs.last().expect("nonempty").is_empty() {
                runs.push(Vec::new());
            }
        }
        for run in runs.iter().filter(|r| !r.is_empty()) {
            let pts: Vec<String> = run.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(
                w,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
        }
        let ly = MARGIN_Y + 10.0 + 16.0 * i as f64;
        let lx = MARGIN_LEFT + pw + 12.0;
        let _ = writeln!(
            w,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 18.0
        );
        let _ = writeln!(w, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 24.0, ly + 4.0, escape(&c.label));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Reads each CSV and writes one curve per file to `out`.
pub fn plot_metrics(paths: &[PathBuf], metric: &str, out: &Path) -> Result<()> {
    if !plottable_metrics().contains(&metric) {
        return Err(NtkError::Usage(format!(
            "unknown metric {metric:?}; valid names: {}",
            plottable_metrics().join(", ")
        )));
    }
    if paths.is_empty() {
        return Err(NtkError::Usage("no input CSV files".into()));
    }
    let mut curves = Vec::with_capacity(paths.len());
    for p in paths {
        let log = read_metrics_csv(p)?;
        if log.records.is_empty() {
            return Err(NtkError::Data(format!("{} has no records", p.display())));
        }
        let switches = log
            .boundaries()
            .iter()
            .map(|&b| log.records[b].global_step as f64)
            .collect();
        let points = log
            .records
            .iter()
            .map(|r| (r.global_step as f64, r.get(metric).unwrap_or(f64::NAN)))
            .collect();
        curves.push(Curve {
            label: label_for(p),
            points,
            switches,
        });
    }
    let svg = render_svg(&curves, metric)?;
    fs::write(out, svg).map_err(|e| NtkError::io(out, e))
}
