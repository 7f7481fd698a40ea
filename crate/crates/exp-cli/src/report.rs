//! Table emission for aggregated runs: per-scenario method × metric tables
//! with mean ± std cells, best-per-column bolding (markdown), and a Δ
//! column against the `source_only` row's headline metric.

use std::path::{Path, PathBuf};

use crate::aggregate::{aggregate, scan_runs, Aggregate, CellReport};
use crate::plots;
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Md,
}

/// Scan the run directories, render the table in the requested format,
/// write it (and optional plots) under `out`, and return the rendered text.
pub fn report_command(
    runs: &[PathBuf],
    format: ReportFormat,
    with_plots: bool,
    out: &Path,
) -> Result<String, CliError> {
    if runs.is_empty() {
        return Err(CliError::Config("report needs at least one run directory".into()));
    }
    let (cells, problems) = scan_runs(runs)?;
    let agg = {
        let mut a = aggregate(&cells);
        a.problems = problems;
        a
    };
    let text = match format {
        ReportFormat::Md => render_markdown(&agg),
        ReportFormat::Csv => render_csv(&agg),
    };
    std::fs::create_dir_all(out)?;
    let name = match format {
        ReportFormat::Md => "report.md",
        ReportFormat::Csv => "report.csv",
    };
    std::fs::write(out.join(name), &text)?;
    if with_plots {
        plots::emit_plots(&cells, &agg, &out.join("plots"))?;
    }
    Ok(text)
}

/// Lower is better only for error-style columns.
fn lower_is_better(metric: &str) -> bool {
    metric.contains("mae")
}

fn fmt_stat(mean: f64, std: f64) -> String {
    format!("{mean:.4} ± {std:.4}")
}

pub fn render_markdown(agg: &Aggregate) -> String {
    let mut out = String::new();
    for scenario in agg.scenarios() {
        let methods = agg.methods_of(&scenario);
        let first = &agg.rows[&(scenario.clone(), methods[0].clone())];
        let metric_names: Vec<String> = first.stats.keys().cloned().collect();
        let primary = first.kind.primary_metric();
        let source_mean = agg.source_mean(&scenario);

        // Best value per metric column across this scenario's methods.
        let best: Vec<f64> = metric_names
            .iter()
            .map(|name| {
                let values = methods
                    .iter()
                    .filter_map(|m| agg.rows[&(scenario.clone(), m.clone())].stats.get(name))
                    .map(|s| s.mean);
                if lower_is_better(name) {
                    values.fold(f64::INFINITY, f64::min)
                } else {
                    values.fold(f64::NEG_INFINITY, f64::max)
                }
            })
            .collect();

        out.push_str(&format!("## {scenario}\n\n"));
        out.push_str("| method | seeds |");
        for name in &metric_names {
            out.push_str(&format!(" {name} |"));
        }
        out.push_str(&format!(" Δ {primary} |\n"));
        out.push_str("|---|---|");
        out.push_str(&"---|".repeat(metric_names.len() + 1));
        out.push('\n');

        for method in &methods {
            let row = &agg.rows[&(scenario.clone(), method.clone())];
            out.push_str(&format!("| {method} | {} |", row.seeds.len()));
            for (name, best_v) in metric_names.iter().zip(&best) {
                match row.stats.get(name) {
                    Some(s) => {
                        let cell = fmt_stat(s.mean, s.std);
                        if (s.mean - best_v).abs() < 1e-12 {
                            out.push_str(&format!(" **{cell}** |"));
                        } else {
                            out.push_str(&format!(" {cell} |"));
                        }
                    }
                    None => out.push_str(" — |"),
                }
            }
            let delta = match (source_mean, method.as_str()) {
                (_, "source_only") | (None, _) => "—".to_string(),
                (Some(base), _) => match row.stats.get(primary) {
                    Some(s) => format!("{:+.4}", s.mean - base),
                    None => "—".to_string(),
                },
            };
            out.push_str(&format!(" {delta} |\n"));
        }
        out.push('\n');
    }
    if !agg.problems.is_empty() {
        out.push_str("## problems\n\n");
        for p in &agg.problems {
            out.push_str(&format!("- {p}\n"));
        }
    }
    out
}

pub fn render_csv(agg: &Aggregate) -> String {
    let mut out = String::from("scenario,method,seeds,metric,mean,std\n");
    for ((scenario, method), row) in &agg.rows {
        for (name, s) in &row.stats {
            out.push_str(&format!(
                "{scenario},{method},{},{name},{:.6},{:.6}\n",
                row.seeds.len(),
                s.mean,
                s.std
            ));
        }
    }
    for p in &agg.problems {
        out.push_str(&format!("# problem: {p}\n"));
    }
    out
}

/// Convenience used by tests: aggregate in-memory cells without a scan.
pub fn render_markdown_cells(cells: &[(CellReport, PathBuf)]) -> String {
    render_markdown(&aggregate(cells))
}
