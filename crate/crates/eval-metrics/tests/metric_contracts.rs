//! Whole-suite contracts: permutation invariance, ordering between metrics,
//! and exact agreement with per-sample brute force at small M.

use csi_core::PaddedLabelVector;
use eval_metrics::{metric_report, MetricReport};
use ndarray::Array2;
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

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

fn random_batch(
    rng: &mut ChaCha8Rng,
    n: usize,
    m: usize,
    c: usize,
) -> (Vec<Array2<f64>>, Vec<PaddedLabelVector>) {
    let k = c - 1;
    let mut preds = Vec::with_capacity(n);
    let mut truths = Vec::with_capacity(n);
    for _ in 0..n {
        preds.push(random_probs(rng, m, c));
        let occ = rng.gen_range(0..=m);
        let mut classes: Vec<usize> = (0..occ).map(|_| rng.gen_range(0..k)).collect();
        classes.resize(m, k);
        truths.push(PaddedLabelVector::from_class_indices(&classes, k).unwrap());
    }
    (preds, truths)
}

fn reports_equal(a: &MetricReport, b: &MetricReport) {
    assert!((a.slot_acc - b.slot_acc).abs() < 1e-12);
    assert!((a.activity_f1_macro - b.activity_f1_macro).abs() < 1e-12);
    assert!((a.exact_match - b.exact_match).abs() < 1e-12);
    assert!((a.occ_mae - b.occ_mae).abs() < 1e-12);
    assert!((a.occ_exact - b.occ_exact).abs() < 1e-12);
    for (c, f) in &a.per_class_f1 {
        assert!((f - b.per_class_f1[c]).abs() < 1e-12);
    }
}

#[test]
fn slot_shuffles_on_either_side_change_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (preds, truths) = random_batch(&mut rng, 40, 6, 10);
    let base = metric_report(&preds, &truths).unwrap();

    // Shuffle prediction slots per sample.
    let shuffled_preds: Vec<Array2<f64>> = preds
        .iter()
        .map(|p| {
            let mut order: Vec<usize> = (0..p.nrows()).collect();
            order.shuffle(&mut rng);
            let mut q = p.clone();
            for (new_row, &old_row) in order.iter().enumerate() {
                for j in 0..p.ncols() {
                    q[[new_row, j]] = p[[old_row, j]];
                }
            }
            q
        })
        .collect();
    let a = metric_report(&shuffled_preds, &truths).unwrap();
    reports_equal(&base, &a);

    // Shuffle ground-truth slots per sample.
    let shuffled_truths: Vec<PaddedLabelVector> = truths
        .iter()
        .map(|t| {
            let mut classes = t.to_class_indices(9).unwrap();
            classes.shuffle(&mut rng);
            PaddedLabelVector::from_class_indices(&classes, 9).unwrap()
        })
        .collect();
    let b = metric_report(&preds, &shuffled_truths).unwrap();
    reports_equal(&base, &b);
}

#[test]
fn exact_match_never_exceeds_slot_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for trial in 0..10 {
        let (preds, truths) = random_batch(&mut rng, 30, 4, 6);
        let r = metric_report(&preds, &truths).unwrap();
        assert!(
            r.exact_match <= r.slot_acc + 1e-12,
            "trial {trial}: {} > {}",
            r.exact_match,
            r.slot_acc
        );
    }
}

#[test]
fn all_counts_exact_implies_zero_count_error() {
    // Predictions that nail every slot: occupancy agrees sample by sample.
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    for _ in 0..20 {
        let occ = rng.gen_range(0..=4usize);
        let mut classes: Vec<usize> = (0..occ).map(|_| rng.gen_range(0..5)).collect();
        classes.resize(4, 5);
        let mut p = Array2::<f64>::from_elem((4, 6), 0.01);
        for (i, &cls) in classes.iter().enumerate() {
            p[[i, cls]] = 0.95;
        }
        preds.push(p);
        truths.push(PaddedLabelVector::from_class_indices(&classes, 5).unwrap());
    }
    let r = metric_report(&preds, &truths).unwrap();
    assert_eq!(r.occ_exact, 1.0);
    assert_eq!(r.occ_mae, 0.0);
}

#[test]
fn four_slot_reports_match_brute_force_oracle() {
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

    let (m, c) = (4usize, 5usize);
    let k = c - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (preds, truths) = random_batch(&mut rng, 25, m, c);

    let perms = permutations(m);
    let n = preds.len();
    let mut correct = 0usize;
    let mut exact = 0usize;
    let mut tp = vec![0usize; k];
    let mut fp = vec![0usize; k];
    let mut fne = vec![0usize; k];
    let mut occ_abs = 0usize;
    let mut occ_hits = 0usize;
    for (p, t) in preds.iter().zip(&truths) {
        let classes = t.to_class_indices(k).unwrap();
        let mut best_cost = f64::INFINITY;
        let mut best_perm: &[usize] = &perms[0];
        for perm in &perms {
            let cost: f64 = perm
                .iter()
                .enumerate()
                .map(|(i, &j)| (-(p[[i, classes[j]]] + 1e-8).ln()).max(0.0))
                .sum();
            if cost < best_cost {
                best_cost = cost;
                best_perm = perm;
            }
        }
        let mut all = true;
        let mut occ_pred = 0usize;
        for i in 0..m {
            let mut arg = 0usize;
            for j in 1..c {
                if p[[i, j]] > p[[i, arg]] {
                    arg = j;
                }
            }
            if arg < k {
                occ_pred += 1;
            }
            let truth_cls = classes[best_perm[i]];
            if arg == truth_cls {
                correct += 1;
                if truth_cls < k {
                    tp[truth_cls] += 1;
                }
            } else {
                all = false;
                if truth_cls < k {
                    fne[truth_cls] += 1;
                    if arg < k {
                        fp[arg] += 1;
                    }
                }
            }
        }
        exact += usize::from(all);
        let occ_true = t.occupancy();
        occ_abs += occ_pred.abs_diff(occ_true);
        occ_hits += usize::from(occ_pred == occ_true);
    }
    let mut f1_sum = 0.0;
    let mut f1s = vec![0.0; k];
    for cl in 0..k {
        let denom = 2 * tp[cl] + fp[cl] + fne[cl];
        f1s[cl] = if denom == 0 {
            0.0
        } else {
            2.0 * tp[cl] as f64 / denom as f64
        };
        f1_sum += f1s[cl];
    }

    let r = metric_report(&preds, &truths).unwrap();
    assert!((r.slot_acc - correct as f64 / (n * m) as f64).abs() < 1e-12);
    assert!((r.exact_match - exact as f64 / n as f64).abs() < 1e-12);
    assert!((r.activity_f1_macro - f1_sum / k as f64).abs() < 1e-12);
    assert!((r.occ_mae - occ_abs as f64 / n as f64).abs() < 1e-12);
    assert!((r.occ_exact - occ_hits as f64 / n as f64).abs() < 1e-12);
    for cl in 0..k {
        assert!((r.per_class_f1[&cl] - f1s[cl]).abs() < 1e-12);
    }
}
