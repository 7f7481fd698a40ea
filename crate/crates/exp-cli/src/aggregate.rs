//! Scanning run directories and reducing per-seed metric cells to
//! per-(scenario, method) mean ± std rows.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    MultiUser,
    SingleUser,
}

impl ReportKind {
    /// Headline metric used for the Δ-vs-source column.
    pub fn primary_metric(&self) -> &'static str {
        match self {
            ReportKind::MultiUser => "slot_acc",
            ReportKind::SingleUser => "accuracy",
        }
    }
}

/// One persisted evaluation: the metric struct wrapped with its run
/// coordinates, as written to `metrics.json` in each cell directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellReport {
    pub scenario: String,
    pub method: String,
    pub seed: u64,
    pub kind: ReportKind,
    pub metrics: serde_json::Value,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Sample mean and standard deviation (ddof = 1); a single value has
/// std 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    assert!(n > 0, "mean_std of an empty slice");
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Clone, Debug)]
pub struct MethodStats {
    pub kind: ReportKind,
    pub seeds: Vec<u64>,
    /// Metric name → aggregate over seeds, ordered by name.
    pub stats: BTreeMap<String, Stat>,
}

#[derive(Debug, Default)]
pub struct Aggregate {
    /// (scenario, method) → aggregated row.
    pub rows: BTreeMap<(String, String), MethodStats>,
    /// Diagnostics that should be shown but are not fatal: recorded seed
    /// failures and unreadable report files.
    pub problems: Vec<String>,
}

/// Recursively collect every `metrics.json` under the given roots, plus the
/// recorded failure diagnostics. Unreadable files become problem entries.
pub fn scan_runs(roots: &[PathBuf]) -> Result<(Vec<(CellReport, PathBuf)>, Vec<String>), CliError> {
    let mut cells = Vec::new();
    let mut problems = Vec::new();
    for root in roots {
        if !root.exists() {
            problems.push(format!("missing run directory: {}", root.display()));
            continue;
        }
        walk(root, &mut cells, &mut problems)?;
    }
    cells.sort_by(|(a, _), (b, _)| {
        (&a.scenario, &a.method, a.seed).cmp(&(&b.scenario, &b.method, b.seed))
    });
    Ok((cells, problems))
}

fn walk(
    dir: &Path,
    cells: &mut Vec<(CellReport, PathBuf)>,
    problems: &mut Vec<String>,
) -> Result<(), CliError> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            walk(&path, cells, problems)?;
        } else if path.file_name().is_some_and(|n| n == "metrics.json") {
            match std::fs::read_to_string(&path)
                .map_err(|e| e.to_string())
                .and_then(|t| serde_json::from_str::<CellReport>(&t).map_err(|e| e.to_string()))
            {
                Ok(cell) => cells.push((cell, path.parent().unwrap().to_path_buf())),
                Err(e) => problems.push(format!("unreadable report {}: {e}", path.display())),
            }
        } else if path.extension().is_some_and(|x| x == "json")
            && dir.file_name().is_some_and(|n| n == "failures")
        {
            problems.push(format!("recorded failure: {}", path.display()));
        }
    }
    Ok(())
}

/// Reduce cells to per-(scenario, method) rows. Numeric scalar fields of
/// the metric struct become columns; nested tables (per-class F1) and the
/// sample count are skipped.
pub fn aggregate(cells: &[(CellReport, PathBuf)]) -> Aggregate {
    let mut groups: BTreeMap<(String, String), Vec<&CellReport>> = BTreeMap::new();
    for (cell, _) in cells {
        groups
            .entry((cell.scenario.clone(), cell.method.clone()))
            .or_default()
            .push(cell);
    }
    let mut agg = Aggregate::default();
    for (key, group) in groups {
        let kind = group[0].kind;
        let mut seeds: Vec<u64> = group.iter().map(|c| c.seed).collect();
        seeds.sort_unstable();
        let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for cell in &group {
            if let serde_json::Value::Object(map) = &cell.metrics {
                for (name, value) in map {
                    if name == "n_samples" {
                        continue;
                    }
                    if let Some(x) = value.as_f64() {
                        columns.entry(name.clone()).or_default().push(x);
                    }
                }
            }
        }
        let stats = columns
            .into_iter()
            .map(|(name, xs)| {
                let (mean, std) = mean_std(&xs);
                (
                    name,
                    Stat {
                        mean,
                        std,
                        n: xs.len(),
                    },
                )
            })
            .collect();
        agg.rows.insert(key, MethodStats { kind, seeds, stats });
    }
    agg
}

impl Aggregate {
    pub fn scenarios(&self) -> Vec<String> {
        let mut out: Vec<String> = self.rows.keys().map(|(s, _)| s.clone()).collect();
        out.dedup();
        out
    }

    /// Methods of one scenario in presentation order: the canonical method
    /// ladder first, then sweep cells and anything else alphabetically.
    pub fn methods_of(&self, scenario: &str) -> Vec<String> {
        let mut named: Vec<String> = self
            .rows
            .keys()
            .filter(|(s, _)| s == scenario)
            .map(|(_, m)| m.clone())
            .collect();
        named.sort_by_key(|m| (method_rank(m), m.clone()));
        named
    }

    /// Mean of the headline metric for the scenario's `source_only` row.
    pub fn source_mean(&self, scenario: &str) -> Option<f64> {
        let row = self.rows.get(&(scenario.to_string(), "source_only".to_string()))?;
        let stat = row.stats.get(row.kind.primary_metric())?;
        Some(stat.mean)
    }
}

fn method_rank(name: &str) -> usize {
    match name {
        "source_only" => 0,
        "shot_im" => 1,
        "shot_pp" => 2,
        "mu_shot_fi" => 3,
        "mu_shot_fi_cpc" => 4,
        "su_shot_fi" => 5,
        _ => 6,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_matches_hand_arithmetic() {
        // (0.8 + 0.9 + 0.7)/3 = 0.8; deviations ±0.1, 0 → var = 0.02/2.
        let (m, s) = mean_std(&[0.8, 0.9, 0.7]);
        assert!((m - 0.8).abs() < 1e-12);
        assert!((s - 0.1).abs() < 1e-12);
        let (m, s) = mean_std(&[0.42]);
        assert_eq!((m, s), (0.42, 0.0));
    }

    fn cell(scenario: &str, method: &str, seed: u64, slot_acc: f64) -> (CellReport, PathBuf) {
        (
            CellReport {
                scenario: scenario.into(),
                method: method.into(),
                seed,
                kind: ReportKind::MultiUser,
                metrics: serde_json::json!({
                    "slot_acc": slot_acc,
                    "occ_mae": 1.0 - slot_acc,
                    "n_samples": 64,
                    "per_class_f1": {"0": 0.5},
                }),
            },
            PathBuf::from("unused"),
        )
    }

    #[test]
    fn aggregation_skips_nested_and_count_fields() {
        let cells = vec![
            cell("cross_room", "shot_im", 0, 0.6),
            cell("cross_room", "shot_im", 1, 0.7),
        ];
        let agg = aggregate(&cells);
        let row = &agg.rows[&("cross_room".into(), "shot_im".into())];
        assert_eq!(row.seeds, vec![0, 1]);
        let keys: Vec<&str> = row.stats.keys().map(|s| s.as_str()).collect();
        assert_eq!(keys, ["occ_mae", "slot_acc"]);
        assert!((row.stats["slot_acc"].mean - 0.65).abs() < 1e-12);
    }

    #[test]
    fn presentation_order_follows_the_method_ladder() {
        let cells = vec![
            cell("cross_room", "mu_shot_fi", 0, 0.8),
            cell("cross_room", "mu_shot_fi_rot0.1", 0, 0.75),
            cell("cross_room", "source_only", 0, 0.5),
            cell("cross_room", "shot_im", 0, 0.6),
        ];
        let agg = aggregate(&cells);
        assert_eq!(
            agg.methods_of("cross_room"),
            ["source_only", "shot_im", "mu_shot_fi", "mu_shot_fi_rot0.1"]
        );
        assert_eq!(agg.source_mean("cross_room"), Some(0.5));
    }
}
