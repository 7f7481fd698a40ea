//! Exact minimum-cost assignment.

use ndarray::Array2;

/// Kuhn-Munkres with potentials, O(n^3). Returns (assignment, assignment
/// cost as tracked by the potentials); `assignment[i]` is the column given
/// to row `i`. No tie-break guarantee; [`hungarian`] layers that on top.
fn solve(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; p[j] is the row matched to column j, 0 = unmatched.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

fn row_order_cost(cost: &Array2<f64>, assignment: &[usize]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[(i, j)])
        .sum()
}

/// Minimum-cost assignment of rows to columns of a square finite matrix.
/// Returns `(mapping, total_cost)` where `mapping[i]` is the column assigned
/// to row `i` and the cost is the exact row-order sum over the mapping.
///
/// Among all minimizers (within a relative tolerance absorbing potential
/// round-off) the lexicographically smallest mapping is returned, so equal
/// costs never make results run-dependent.
///
/// Panics on non-square or non-finite input; cost matrices are produced
/// internally and those states are bugs, not data errors.
pub fn hungarian(cost: &Array2<f64>) -> (Vec<usize>, f64) {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "cost matrix must be square");
    assert!(
        cost.iter().all(|c| c.is_finite()),
        "cost matrix must be finite"
    );
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let best = row_order_cost(cost, &solve(cost));
    let tol = 1e-9 * (1.0 + best.abs());

    // Fix columns row by row, always trying the smallest free column first
    // and keeping it when the remaining subproblem can still reach `best`.
    let mut mapping = vec![usize::MAX; n];
    let mut used = vec![false; n];
    let mut fixed_cost = 0.0;
    for i in 0..n {
        let free: Vec<usize> = (0..n).filter(|&j| !used[j]).collect();
        let mut chosen = None;
        for &j in &free {
            let rest: Vec<usize> = free.iter().copied().filter(|&c| c != j).collect();
            let sub_cost = if rest.is_empty() {
                0.0
            } else {
                let sub = Array2::from_shape_fn((rest.len(), rest.len()), |(r, c)| {
                    cost[(i + 1 + r, rest[c])]
                });
                row_order_cost(&sub, &solve(&sub))
            };
            if fixed_cost + cost[(i, j)] + sub_cost <= best + tol {
                chosen = Some(j);
                break;
            }
        }
        let j = chosen.expect("some free column must complete an optimal assignment");
        mapping[i] = j;
        used[j] = true;
        fixed_cost += cost[(i, j)];
    }
    let total = row_order_cost(cost, &mapping);
    (mapping, total)
}
