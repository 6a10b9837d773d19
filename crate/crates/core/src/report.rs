//! Run artifacts: structured JSON, a text table, and the backward-selection
//! curve as CSV and SVG. Everything except the JSON can be regenerated from it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cv::ModelSpec;
use crate::error::{Error, Result};
use crate::experiment::{ExperimentConfig, ExperimentReport};
use crate::io::{atomic_write_bytes, open};
use crate::models::MaxFeatures;
use crate::selection::CurvePoint;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TABLE: &str = "report.txt";
pub const CURVE_CSV: &str = "bfs_curve.csv";
pub const CURVE_SVG: &str = "bfs_curve.svg";

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub format_version: u32,
    pub config: ExperimentConfig,
    pub report: ExperimentReport,
}

impl RunArtifact {
    pub fn new(config: ExperimentConfig, report: ExperimentReport) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            config,
            report,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let artifact: Self = serde_json::from_reader(std::io::BufReader::new(open(path)?))?;
        if artifact.format_version != FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "{}: format version {} is not supported",
                path.display(),
                artifact.format_version
            )));
        }
        Ok(artifact)
    }
}

fn describe_params(spec: &ModelSpec) -> String {
    match spec {
        ModelSpec::Logistic { c } => format!("C={c}"),
        ModelSpec::Forest(p) => {
            let mf = match p.max_features {
                MaxFeatures::Sqrt => "sqrt".to_string(),
                MaxFeatures::All => "all".to_string(),
                MaxFeatures::Count(k) => k.to_string(),
            };
            format!(
                "trees={} bootstrap={} max_features={} min_leaf={}",
                p.n_estimators, p.bootstrap, mf, p.min_samples_leaf
            )
        }
    }
}

/// Left-aligned first column, right-aligned numbers.
fn aligned(rows: &[Vec<String>]) -> String {
    let n = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..n)
        .map(|j| rows.iter().filter_map(|r| r.get(j)).map(|c| c.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(j, c)| {
                if j == 0 {
                    format!("{c:<w$}", w = widths[j])
                } else {
                    format!("{c:>w$}", w = widths[j])
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

pub fn render_table(artifact: &RunArtifact) -> String {
    let r = &artifact.report;
    let level = (1.0 - artifact.config.alpha) * 100.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "train {} ({} positive), test {}, seed {}",
        r.n_train, r.train_positive, r.n_test, artifact.config.seed
    );
    out.push('\n');
    let mut rows = vec![vec![
        "cell".to_string(),
        "features".to_string(),
        "cv auc".to_string(),
        "auc-roc".to_string(),
        format!("{level:.0}% ci"),
        "auc-pr".to_string(),
        "pr baseline".to_string(),
    ]];
    for c in &r.cells {
        rows.push(vec![
            c.cell.label(),
            c.selected_features.len().to_string(),
            format!("{:.3} ± {:.3}", c.cv_mean_auc, c.cv_std_auc),
            format!("{:.3}", c.test.auc_roc),
            format!("[{:.3}, {:.3}]", c.test.auc_roc_ci.0, c.test.auc_roc_ci.1),
            format!("{:.3}", c.test.auc_pr),
            format!("{:.3}", c.test.pr_baseline),
        ]);
    }
    out.push_str(&aligned(&rows));

    out.push('\n');
    for c in &r.cells {
        let _ = writeln!(out, "{}: {}", c.cell.label(), describe_params(&c.best_params));
    }
    for f in &r.failures {
        let _ = writeln!(out, "{}: FAILED: {}", f.cell.label(), f.error);
    }

    if let Some(imp) = &r.importances {
        let mean = imp.iter().map(|(_, v)| v).sum::<f64>() / imp.len().max(1) as f64;
        let mut sorted = imp.clone();
        sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let _ = writeln!(out, "\nrandom forest importances (mean {mean:.4})");
        let rows: Vec<Vec<String>> = sorted
            .iter()
            .map(|(n, v)| {
                let mark = if *v > mean { "*" } else { "" };
                vec![n.clone(), format!("{v:.4}"), mark.to_string()]
            })
            .collect();
        out.push_str(&aligned(&rows));
    }
    if let Some(curve) = &r.bfs_curve {
        if let Some(best) = best_point(curve) {
            let _ = writeln!(
                out,
                "\nbackward selection: best size {} (cv auc {:.3} ± {:.3})",
                best.size, best.mean_auc, best.std_auc
            );
        }
    }
    if !r.preprocess_diagnostics.is_empty() {
        out.push_str("\npreprocessing notes\n");
        for d in &r.preprocess_diagnostics {
            let _ = writeln!(out, "  {d}");
        }
    }
    out
}

/// Highest mean; ties go to the smaller subset.
fn best_point(curve: &[CurvePoint]) -> Option<&CurvePoint> {
    curve.iter().fold(None, |best: Option<&CurvePoint>, p| match best {
        Some(b) if b.mean_auc > p.mean_auc || (b.mean_auc == p.mean_auc && b.size < p.size) => Some(b),
        _ => Some(p),
    })
}

pub fn curve_csv(curve: &[CurvePoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["size", "mean_auc", "std_auc", "removed"])?;
    let mut points: Vec<&CurvePoint> = curve.iter().collect();
    points.sort_by_key(|p| p.size);
    for p in points {
        w.write_record([
            p.size.to_string(),
            p.mean_auc.to_string(),
            p.std_auc.to_string(),
            p.removed.clone().unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Tick step from {1, 2, 5} × 10^k giving at most `max_ticks` intervals.
fn nice_step(span: f64, max_ticks: usize) -> f64 {
    let raw = span / max_ticks as f64;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag)
}

/// Mean CV AUC against subset size with a shaded ±1 std band.
pub fn curve_svg(curve: &[CurvePoint]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const LEFT: f64 = 64.0;
    const RIGHT: f64 = 24.0;
    const TOP: f64 = 36.0;
    const BOTTOM: f64 = 52.0;

    let mut points: Vec<&CurvePoint> = curve.iter().collect();
    points.sort_by_key(|p| p.size);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">Backward feature selection</text>"#,
        W / 2.0
    );
    if points.is_empty() {
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">no data</text>"#, W / 2.0, H / 2.0);
        svg.push_str("</svg>\n");
        return svg;
    }

    let x_min = points[0].size as f64;
    let x_max = points[points.len() - 1].size as f64;
    let x_span = (x_max - x_min).max(1.0);
    let lo = points.iter().map(|p| p.mean_auc - p.std_auc).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.mean_auc + p.std_auc).fold(f64::NEG_INFINITY, f64::max);
    let y_step = nice_step((hi - lo).max(0.02), 5);
    let y_min = (lo / y_step).floor() * y_step;
    let y_max = ((hi / y_step).ceil() * y_step).max(y_min + y_step);

    let px = |x: f64| LEFT + (x - x_min) / x_span * (W - LEFT - RIGHT);
    let py = |y: f64| H - BOTTOM - (y - y_min) / (y_max - y_min) * (H - TOP - BOTTOM);

    // axes and ticks
    let _ = writeln!(
        svg,
        r#"<path d="M{:.2},{:.2} V{:.2} H{:.2}" fill="none" stroke="black"/>"#,
        LEFT,
        TOP,
        H - BOTTOM,
        W - RIGHT
    );
    let x_step = nice_step(x_span, 10).max(1.0);
    let mut x = (x_min / x_step).ceil() * x_step;
    while x <= x_max + 1e-9 {
        let _ = writeln!(
            svg,
            r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="black"/><text x="{0:.2}" y="{3:.2}" text-anchor="middle">{4}</text>"#,
            px(x),
            H - BOTTOM,
            H - BOTTOM + 5.0,
            H - BOTTOM + 18.0,
            x as i64
        );
        x += x_step;
    }
    let mut y = y_min;
    while y <= y_max + 1e-9 {
        let _ = writeln!(
            svg,
            r##"<line x1="{0:.2}" y1="{1:.2}" x2="{2:.2}" y2="{1:.2}" stroke="#dddddd"/><text x="{3:.2}" y="{4:.2}" text-anchor="end">{5:.2}</text>"##,
            LEFT,
            py(y),
            W - RIGHT,
            LEFT - 6.0,
            py(y) + 4.0,
            y
        );
        y += y_step;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">number of features</text>"#,
        LEFT + (W - LEFT - RIGHT) / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{0:.2}" text-anchor="middle" transform="rotate(-90 16 {0:.2})">mean CV AUC-ROC</text>"#,
        TOP + (H - TOP - BOTTOM) / 2.0
    );

    // band: upper edge left to right, lower edge back
    let mut band = String::new();
    for p in &points {
        let _ = write!(band, "{:.2},{:.2} ", px(p.size as f64), py(p.mean_auc + p.std_auc));
    }
    for p in points.iter().rev() {
        let _ = write!(band, "{:.2},{:.2} ", px(p.size as f64), py(p.mean_auc - p.std_auc));
    }
    let _ = writeln!(
        svg,
        r##"<polygon points="{}" fill="#4c78a8" fill-opacity="0.25" stroke="none"/>"##,
        band.trim_end()
    );
    let line: Vec<String> = points
        .iter()
        .map(|p| format!("{:.2},{:.2}", px(p.size as f64), py(p.mean_auc)))
        .collect();
    let _ = writeln!(
        svg,
        r##"<polyline points="{}" fill="none" stroke="#4c78a8" stroke-width="2"/>"##,
        line.join(" ")
    );
    if let Some(best) = best_point(curve) {
        let _ = writeln!(
            svg,
            r##"<circle cx="{:.2}" cy="{:.2}" r="4" fill="#e45756"/>"##,
            px(best.size as f64),
            py(best.mean_auc)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes the JSON report, the text table and, when present, the curve files.
pub fn write_artifacts(dir: &Path, artifact: &RunArtifact) -> Result<Vec<PathBuf>> {
    let mut written = vec![dir.join(REPORT_JSON)];
    atomic_write_bytes(&written[0], artifact.to_json()?.as_bytes())?;
    written.extend(write_derived(dir, artifact)?);
    Ok(written)
}

/// Everything regenerable from the JSON report.
pub fn write_derived(dir: &Path, artifact: &RunArtifact) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let table = dir.join(REPORT_TABLE);
    atomic_write_bytes(&table, render_table(artifact).as_bytes())?;
    written.push(table);
    if let Some(curve) = &artifact.report.bfs_curve {
        let csv_path = dir.join(CURVE_CSV);
        atomic_write_bytes(&csv_path, curve_csv(curve)?.as_bytes())?;
        let svg_path = dir.join(CURVE_SVG);
        atomic_write_bytes(&svg_path, curve_svg(curve).as_bytes())?;
        written.extend([csv_path, svg_path]);
    }
    Ok(written)
}
