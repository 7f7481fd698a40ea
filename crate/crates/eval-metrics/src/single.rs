//! Standard single-user classification metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::multi::per_class_csv;
use crate::MetricsError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleUserReport {
    pub accuracy: f64,
    pub per_class_f1: BTreeMap<usize, f64>,
    pub macro_f1: f64,
    pub n_samples: usize,
}

impl SingleUserReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn per_class_csv(&self) -> String {
        per_class_csv(&self.per_class_f1)
    }
}

/// Accuracy plus per-class and macro F1 over `k` classes. A class with no
/// true or predicted samples scores an F1 of 0 and still enters the macro
/// mean.
pub fn single_user_metrics(
    preds: &[usize],
    truths: &[usize],
    k: usize,
) -> Result<SingleUserReport, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::Empty("no samples to score"));
    }
    if preds.len() != truths.len() {
        return Err(MetricsError::Shape(format!(
            "{} predictions vs {} labels",
            preds.len(),
            truths.len()
        )));
    }
    if let Some(&bad) = preds.iter().chain(truths).find(|&&c| c >= k) {
        return Err(MetricsError::Shape(format!(
            "class {bad} out of range for K={k}"
        )));
    }
    let mut tp = vec![0usize; k];
    let mut fp = vec![0usize; k];
    let mut fne = vec![0usize; k];
    let mut correct = 0usize;
    for (&p, &t) in preds.iter().zip(truths) {
        if p == t {
            tp[t] += 1;
            correct += 1;
        } else {
            fp[p] += 1;
            fne[t] += 1;
        }
    }
    let per_class_f1: BTreeMap<usize, f64> = (0..k)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fne[c];
            let f1 = if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            };
            (c, f1)
        })
        .collect();
    let macro_f1 = per_class_f1.values().sum::<f64>() / k as f64;
    Ok(SingleUserReport {
        accuracy: correct as f64 / preds.len() as f64,
        per_class_f1,
        macro_f1,
        n_samples: preds.len(),
    })
}
