//! Aligned slot metrics for multi-user predictions.

use std::collections::BTreeMap;

use csi_core::PaddedLabelVector;
use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use set_match::{build_cost_matrix, hungarian};

use crate::MetricsError;

/// Aggregate multi-user scores over an evaluation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Fraction of aligned slots (all `N * M`) with the correct class.
    pub slot_acc: f64,
    /// Macro F1 over activity classes on ground-truth-occupied slots.
    pub activity_f1_macro: f64,
    /// Fraction of samples with every slot correct after alignment.
    pub exact_match: f64,
    /// Mean absolute error of the predicted person count.
    pub occ_mae: f64,
    /// Fraction of samples whose predicted person count is exact.
    pub occ_exact: f64,
    /// Per-activity-class F1 on occupied slots; key is the class index.
    pub per_class_f1: BTreeMap<usize, f64>,
    pub n_samples: usize,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Two-column `class,f1` table of the per-class scores.
    pub fn per_class_csv(&self) -> String {
        per_class_csv(&self.per_class_f1)
    }
}

pub(crate) fn per_class_csv(per_class: &BTreeMap<usize, f64>) -> String {
    let mut out = String::from("class,f1\n");
    for (class, f1) in per_class {
        out.push_str(&format!("{class},{f1}\n"));
    }
    out
}

/// First index of the row maximum; ties go to the lowest class.
pub(crate) fn argmax_row(row: ArrayView1<f64>) -> usize {
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0usize;
    for (i, &v) in row.iter().enumerate() {
        if v > best {
            best = v;
            arg = i;
        }
    }
    arg
}

/// Minimum-cost assignment of prediction slots to ground-truth slots under
/// the negative log probability of the truth class; `mapping[i]` is the
/// ground-truth slot paired with prediction slot `i`.
pub fn align(
    pred_probs: &Array2<f64>,
    truth: &PaddedLabelVector,
) -> Result<Vec<usize>, MetricsError> {
    let cost = build_cost_matrix(pred_probs, truth)?;
    let (mapping, _) = hungarian(&cost);
    Ok(mapping)
}

/// Argmax classes of the prediction and the aligned truth classes, both in
/// prediction-slot order, with `K` encoding "no person".
fn aligned_classes(
    pred_probs: &Array2<f64>,
    truth: &PaddedLabelVector,
) -> Result<(Vec<usize>, Vec<usize>), MetricsError> {
    let (_, c) = pred_probs.dim();
    let mapping = align(pred_probs, truth)?;
    let targets = truth.to_class_indices(c - 1)?;
    let preds: Vec<usize> = pred_probs.rows().into_iter().map(argmax_row).collect();
    let aligned: Vec<usize> = mapping.iter().map(|&j| targets[j]).collect();
    Ok((preds, aligned))
}

/// Running sums over an evaluation set; every public metric is a projection
/// of one pass.
struct Tally {
    samples: usize,
    slots: usize,
    correct_slots: usize,
    exact_samples: usize,
    /// Confusion counts on ground-truth-occupied slots, per activity class.
    tp: Vec<usize>,
    fp: Vec<usize>,
    fne: Vec<usize>,
    occ_abs_err: usize,
    occ_hits: usize,
    classes: usize,
}

fn accumulate(
    preds: &[Array2<f64>],
    truths: &[PaddedLabelVector],
) -> Result<Tally, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::Empty("no samples to score"));
    }
    if preds.len() != truths.len() {
        return Err(MetricsError::Shape(format!(
            "{} predictions vs {} label vectors",
            preds.len(),
            truths.len()
        )));
    }
    let (m, c) = preds[0].dim();
    let k = c - 1;
    let mut tally = Tally {
        samples: preds.len(),
        slots: 0,
        correct_slots: 0,
        exact_samples: 0,
        tp: vec![0; k],
        fp: vec![0; k],
        fne: vec![0; k],
        occ_abs_err: 0,
        occ_hits: 0,
        classes: c,
    };
    for (p, t) in preds.iter().zip(truths) {
        if p.dim() != (m, c) {
            return Err(MetricsError::Shape(format!(
                "prediction shape {:?} differs from ({m}, {c})",
                p.dim()
            )));
        }
        let (pred, truth) = aligned_classes(p, t)?;
        let mut all = true;
        for (&pc, &tc) in pred.iter().zip(&truth) {
            tally.slots += 1;
            if pc == tc {
                tally.correct_slots += 1;
            } else {
                all = false;
            }
            if tc < k {
                if pc == tc {
                    tally.tp[tc] += 1;
                } else {
                    tally.fne[tc] += 1;
                    if pc < k {
                        tally.fp[pc] += 1;
                    }
                }
            }
        }
        if all {
            tally.exact_samples += 1;
        }
        let pred_occ = pred.iter().filter(|&&pc| pc < k).count();
        let true_occ = t.occupancy();
        tally.occ_abs_err += pred_occ.abs_diff(true_occ);
        if pred_occ == true_occ {
            tally.occ_hits += 1;
        }
    }
    Ok(tally)
}

impl Tally {
    fn slot_acc(&self) -> f64 {
        self.correct_slots as f64 / self.slots as f64
    }

    fn exact_match(&self) -> f64 {
        self.exact_samples as f64 / self.samples as f64
    }

    fn per_class_f1(&self) -> BTreeMap<usize, f64> {
        let k = self.classes - 1;
        (0..k)
            .map(|cl| {
                let denom = 2 * self.tp[cl] + self.fp[cl] + self.fne[cl];
                let f1 = if denom == 0 {
                    0.0
                } else {
                    2.0 * self.tp[cl] as f64 / denom as f64
                };
                (cl, f1)
            })
            .collect()
    }

    fn macro_f1(&self) -> f64 {
        let per = self.per_class_f1();
        per.values().sum::<f64>() / per.len() as f64
    }

    fn occ(&self) -> (f64, f64) {
        (
            self.occ_abs_err as f64 / self.samples as f64,
            self.occ_hits as f64 / self.samples as f64,
        )
    }
}

/// Fraction of aligned slots whose argmax class matches the truth.
pub fn slot_accuracy(
    preds: &[Array2<f64>],
    truths: &[PaddedLabelVector],
) -> Result<f64, MetricsError> {
    Ok(accumulate(preds, truths)?.slot_acc())
}

/// Fraction of samples with all slots correct after alignment.
pub fn exact_match(
    preds: &[Array2<f64>],
    truths: &[PaddedLabelVector],
) -> Result<f64, MetricsError> {
    Ok(accumulate(preds, truths)?.exact_match())
}

/// Macro F1 over activity classes, scored on the slots whose aligned truth
/// is occupied. A class never seen on either side scores 0 and still enters
/// the mean.
pub fn activity_f1(
    preds: &[Array2<f64>],
    truths: &[PaddedLabelVector],
) -> Result<(f64, BTreeMap<usize, f64>), MetricsError> {
    let tally = accumulate(preds, truths)?;
    Ok((tally.macro_f1(), tally.per_class_f1()))
}

/// Person-count error: mean absolute difference and exact-count rate.
/// Counting needs no alignment; it only compares cardinalities.
pub fn occupancy_metrics(
    preds: &[Array2<f64>],
    truths: &[PaddedLabelVector],
) -> Result<(f64, f64), MetricsError> {
    Ok(accumulate(preds, truths)?.occ())
}

/// Full report in one pass over the evaluation set.
pub fn metric_report(
    preds: &[Array2<f64>],
    truths: &[PaddedLabelVector],
) -> Result<MetricReport, MetricsError> {
    let tally = accumulate(preds, truths)?;
    let (occ_mae, occ_exact) = tally.occ();
    let report = MetricReport {
        slot_acc: tally.slot_acc(),
        activity_f1_macro: tally.macro_f1(),
        exact_match: tally.exact_match(),
        occ_mae,
        occ_exact,
        per_class_f1: tally.per_class_f1(),
        n_samples: tally.samples,
    };
    debug_assert!(report.slot_acc >= 0.0 && report.slot_acc <= 1.0);
    debug_assert!(report.exact_match <= report.slot_acc + 1e-12);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use csi_core::pad_label_set;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// One-hot probability rows for the given classes (with a touch of mass
    /// elsewhere so rows are generic, not exactly degenerate).
    fn soft_one_hot(classes: &[usize], c: usize, conf: f64) -> Array2<f64> {
        let m = classes.len();
        let rest = (1.0 - conf) / (c - 1) as f64;
        Array2::from_shape_fn((m, c), |(i, j)| if j == classes[i] { conf } else { rest })
    }

    fn random_probs(rng: &mut ChaCha8Rng, m: usize, c: usize) -> Array2<f64> {
        let mut p = Array2::<f64>::zeros((m, c));
        for i in 0..m {
            let mut s = 0.0;
            for j in 0..c {
                let v: f64 = rng.gen_range(0.02..1.0);
                p[[i, j]] = v;
                s += v;
            }
            for j in 0..c {
                p[[i, j]] /= s;
            }
        }
        p
    }

    #[test]
    fn perfect_match_aligns_to_truth_classes() {
        let truth = pad_label_set(&[2, 0], 3).unwrap();
        // Slots predict 0, no-person, 2: a permutation of the truth.
        let probs = soft_one_hot(&[0, 4, 2], 5, 0.9);
        let (pred, aligned) = aligned_classes(&probs, &truth).unwrap();
        assert_eq!(pred, aligned);
    }

    #[test]
    fn six_slot_alignment_matches_permutation_enumeration() {
        fn permutations(n: usize) -> Vec<Vec<usize>> {
            if n == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for p in permutations(n - 1) {
                for pos in 0..n {
                    let mut q = p.clone();
                    q.insert(pos, n - 1);
                    out.push(q);
                }
            }
            out
        }
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..25 {
            let probs = random_probs(&mut rng, 6, 10);
            let n_people = rng.gen_range(0..=6);
            let acts: Vec<usize> = (0..n_people).map(|_| rng.gen_range(0..9)).collect();
            let truth = pad_label_set(&acts, 6).unwrap();
            let cost = build_cost_matrix(&probs, &truth).unwrap();

            let mut best = f64::INFINITY;
            for perm in permutations(6) {
                let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
                if total < best {
                    best = total;
                }
            }
            let mapping = align(&probs, &truth).unwrap();
            let got: f64 = mapping.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
            assert!((got - best).abs() < 1e-12);
        }
    }

    #[test]
    fn slot_accuracy_counts_matched_slots() {
        let truth = vec![pad_label_set(&[1, 3], 3).unwrap()];
        let perfect = vec![soft_one_hot(&[3, 9, 1], 10, 0.95)];
        assert_eq!(slot_accuracy(&perfect, &truth).unwrap(), 1.0);

        // Slot predicting class 5 cannot match anything: 2 of 3 correct.
        let off = vec![soft_one_hot(&[3, 5, 1], 10, 0.95)];
        let acc = slot_accuracy(&off, &truth).unwrap();
        assert!((acc - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn random_predictor_scores_one_in_ten() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let mut preds = Vec::with_capacity(n);
        let mut truths = Vec::with_capacity(n);
        for _ in 0..n {
            preds.push(random_probs(&mut rng, 1, 10));
            let cls = rng.gen_range(0..10usize);
            truths.push(PaddedLabelVector::from_class_indices(&[cls], 9).unwrap());
        }
        let acc = slot_accuracy(&preds, &truths).unwrap();
        assert!((acc - 0.10).abs() < 0.01, "got {acc}");
    }

    #[test]
    fn exact_match_requires_every_slot() {
        let truth = vec![
            pad_label_set(&[1, 3], 3).unwrap(),
            pad_label_set(&[2], 3).unwrap(),
        ];
        let preds = vec![
            soft_one_hot(&[3, 1, 9], 10, 0.9),
            soft_one_hot(&[2, 9, 5], 10, 0.9), // third slot claims class 5
        ];
        let em = exact_match(&preds, &truth).unwrap();
        assert!((em - 0.5).abs() < 1e-12);

        // Rewriting the truth in another slot order changes nothing.
        let truth_permuted = vec![
            PaddedLabelVector::from_class_indices(&[9, 3, 1], 9).unwrap(),
            pad_label_set(&[2], 3).unwrap(),
        ];
        let em2 = exact_match(&preds, &truth_permuted).unwrap();
        assert_eq!(em, em2);
    }

    #[test]
    fn activity_f1_perfect_and_degenerate() {
        // All three classes appear and are predicted exactly.
        let truths = vec![
            pad_label_set(&[0, 1], 2).unwrap(),
            pad_label_set(&[2], 2).unwrap(),
        ];
        let preds = vec![
            soft_one_hot(&[1, 0], 4, 0.9),
            soft_one_hot(&[3, 2], 4, 0.9),
        ];
        let (macro_f1, per) = activity_f1(&preds, &truths).unwrap();
        assert!((macro_f1 - 1.0).abs() < 1e-12);
        assert_eq!(per.len(), 3);

        // Degenerate truth: only class 0 occurs and is always right, so the
        // other classes contribute zeros to the mean.
        let truths = vec![pad_label_set(&[0], 1).unwrap(); 4];
        let preds = vec![soft_one_hot(&[0], 4, 0.9); 4];
        let (macro_f1, per) = activity_f1(&preds, &truths).unwrap();
        assert!((per[&0] - 1.0).abs() < 1e-12);
        assert_eq!(per[&1], 0.0);
        assert!((macro_f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn random_predictor_macro_f1_near_two_nineteenths() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 10_000;
        let mut preds = Vec::with_capacity(n);
        let mut truths = Vec::with_capacity(n);
        for _ in 0..n {
            preds.push(random_probs(&mut rng, 1, 10));
            truths.push(pad_label_set(&[rng.gen_range(0..9usize)], 1).unwrap());
        }
        let (macro_f1, _) = activity_f1(&preds, &truths).unwrap();
        assert!((macro_f1 - 0.105).abs() < 0.01, "got {macro_f1}");
    }

    #[test]
    fn occupancy_counts_match_counting_oracle() {
        let truths = vec![pad_label_set(&[4, 4, 1], 6).unwrap()];
        let preds = vec![soft_one_hot(&[4, 1, 4, 9, 9, 9], 10, 0.9)];
        let (mae, exact) = occupancy_metrics(&preds, &truths).unwrap();
        assert_eq!((mae, exact), (0.0, 1.0));

        // Truth holds 3 people, prediction claims an empty room.
        let empty = vec![soft_one_hot(&[9, 9, 9, 9, 9, 9], 10, 0.9)];
        let (mae, exact) = occupancy_metrics(&empty, &truths).unwrap();
        assert_eq!((mae, exact), (3.0, 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut preds = Vec::new();
        let mut truths = Vec::new();
        let mut abs = 0usize;
        let mut hits = 0usize;
        for _ in 0..50 {
            let p = random_probs(&mut rng, 4, 6);
            let occ_pred = p
                .rows()
                .into_iter()
                .filter(|r| argmax_row(r.view()) < 5)
                .count();
            let n_people = rng.gen_range(0..=4usize);
            let acts: Vec<usize> = (0..n_people).map(|_| rng.gen_range(0..5)).collect();
            abs += occ_pred.abs_diff(n_people);
            hits += usize::from(occ_pred == n_people);
            preds.push(p);
            truths.push(pad_label_set(&acts, 4).unwrap());
        }
        let (mae, exact) = occupancy_metrics(&preds, &truths).unwrap();
        assert!((mae - abs as f64 / 50.0).abs() < 1e-12);
        assert!((exact - hits as f64 / 50.0).abs() < 1e-12);
    }

    #[test]
    fn report_serializes_and_round_trips() {
        let truths = vec![pad_label_set(&[0, 1], 3).unwrap()];
        let preds = vec![soft_one_hot(&[1, 0, 4], 5, 0.9)];
        let report = metric_report(&preds, &truths).unwrap();
        assert_eq!(report.n_samples, 1);
        assert_eq!(report.slot_acc, 1.0);
        let json = report.to_json();
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        let csv = report.per_class_csv();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines[0], "class,f1");
        assert_eq!(lines.len(), 5); // header + K=4 activity classes
    }

    #[test]
    fn shape_errors_are_reported() {
        assert!(matches!(
            metric_report(&[], &[]),
            Err(MetricsError::Empty(_))
        ));
        let truths = vec![pad_label_set(&[0], 2).unwrap()];
        assert!(metric_report(&[], &truths).is_err());
        let preds = vec![soft_one_hot(&[0, 1], 4, 0.9), soft_one_hot(&[0], 4, 0.9)];
        let truths2 = vec![
            pad_label_set(&[0], 2).unwrap(),
            pad_label_set(&[1], 1).unwrap(),
        ];
        assert!(matches!(
            metric_report(&preds, &truths2),
            Err(MetricsError::Shape(_))
        ));
    }
}
