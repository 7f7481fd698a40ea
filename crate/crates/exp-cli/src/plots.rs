//! Minimal hand-rolled SVG emission: adaptation loss curves per scenario
//! and headline-metric bars with std whiskers. No drawing dependency; the
//! files are plain `<svg>` markup.

use std::path::{Path, PathBuf};

use train_adapt::EpochRecord;

use crate::aggregate::{Aggregate, CellReport};
use crate::CliError;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 48.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

fn svg_header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" \
         font-family=\"monospace\" font-size=\"11\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n",
        W / 2.0
    )
}

fn axes(y_min: f64, y_max: f64) -> String {
    let x0 = MARGIN;
    let y0 = H - MARGIN;
    let y1 = MARGIN;
    format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y_max:.3}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y_min:.3}</text>\n",
        W - MARGIN / 2.0,
        x0 - 4.0,
        y1 + 4.0,
        x0 - 4.0,
        y0 + 4.0,
    )
}

/// Map `(i, v)` into plot coordinates for `n` points spanning `[lo, hi]`.
fn place(i: usize, n: usize, v: f64, lo: f64, hi: f64) -> (f64, f64) {
    let x = if n <= 1 {
        MARGIN
    } else {
        MARGIN + (W - 2.0 * MARGIN) * i as f64 / (n - 1) as f64
    };
    let span = if hi > lo { hi - lo } else { 1.0 };
    let y = H - MARGIN - (H - 2.0 * MARGIN) * (v - lo) / span;
    (x, y)
}

/// Polyline chart of one numeric series per label.
pub fn loss_curve_svg(title: &str, series: &[(String, Vec<f64>)]) -> String {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut n = 0;
    for (_, xs) in series {
        n = n.max(xs.len());
        for &v in xs {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    let mut out = svg_header(title);
    out.push_str(&axes(lo, hi));
    for (si, (label, xs)) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let pts: Vec<String> = xs
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let (x, y) = place(i, n, v, lo, hi);
                format!("{x:.1},{y:.1}")
            })
            .collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            pts.join(" ")
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{label}</text>\n",
            W - MARGIN + 4.0,
            MARGIN + 14.0 * si as f64
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Bar chart with std whiskers, one bar per label.
pub fn bar_chart_svg(title: &str, bars: &[(String, f64, f64)]) -> String {
    let hi = bars
        .iter()
        .map(|(_, m, s)| m + s)
        .fold(f64::NEG_INFINITY, f64::max)
        .max(1e-9);
    let mut out = svg_header(title);
    out.push_str(&axes(0.0, hi));
    let n = bars.len().max(1);
    let slot = (W - 2.0 * MARGIN) / n as f64;
    let bw = slot * 0.6;
    for (i, (label, mean, std)) in bars.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let cx = MARGIN + slot * (i as f64 + 0.5);
        let scale = (H - 2.0 * MARGIN) / hi;
        let y = H - MARGIN - mean * scale;
        out.push_str(&format!(
            "<rect x=\"{:.1}\" y=\"{y:.1}\" width=\"{bw:.1}\" height=\"{:.1}\" fill=\"{color}\"/>\n",
            cx - bw / 2.0,
            mean * scale
        ));
        let (wy0, wy1) = (H - MARGIN - (mean - std) * scale, H - MARGIN - (mean + std) * scale);
        out.push_str(&format!(
            "<line x1=\"{cx:.1}\" y1=\"{wy0:.1}\" x2=\"{cx:.1}\" y2=\"{wy1:.1}\" stroke=\"black\"/>\n"
        ));
        out.push_str(&format!(
            "<text x=\"{cx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{label}</text>\n",
            H - MARGIN + 14.0
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Write one loss-curve SVG (total adaptation loss per method/seed) and one
/// headline-metric bar SVG per scenario.
pub fn emit_plots(
    cells: &[(CellReport, PathBuf)],
    agg: &Aggregate,
    dir: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for scenario in agg.scenarios() {
        let mut series = Vec::new();
        for (cell, cell_dir) in cells {
            if cell.scenario != scenario {
                continue;
            }
            let epochs_path = cell_dir.join("epochs.jsonl");
            if !epochs_path.exists() {
                continue; // source_only cells carry no adaptation curve
            }
            let text = std::fs::read_to_string(&epochs_path)?;
            let mut totals = Vec::new();
            for line in text.lines() {
                let rec: EpochRecord = serde_json::from_str(line)?;
                if let Some(v) = rec.term("total") {
                    totals.push(v);
                }
            }
            if !totals.is_empty() {
                series.push((format!("{} s{}", cell.method, cell.seed), totals));
            }
        }
        if !series.is_empty() {
            let path = dir.join(format!("{scenario}_loss.svg"));
            std::fs::write(&path, loss_curve_svg(&format!("{scenario} loss"), &series))?;
            written.push(path);
        }

        let methods = agg.methods_of(&scenario);
        let mut bars = Vec::new();
        for m in methods {
            let row = &agg.rows[&(scenario.clone(), m.clone())];
            if let Some(s) = row.stats.get(row.kind.primary_metric()) {
                bars.push((m, s.mean, s.std));
            }
        }
        if !bars.is_empty() {
            let path = dir.join(format!("{scenario}_metrics.svg"));
            std::fs::write(&path, bar_chart_svg(&scenario, &bars))?;
            written.push(path);
        }
    }
    Ok(written)
}
