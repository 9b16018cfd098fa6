//! On-line label switching resolution by pivoting.
//!
//! After burn-in a pivot clustering is fixed; every saved draw then has its
//! cluster labels permuted so the data likelihood under the pivot assignments
//! is maximized. The optimal permutation is an assignment problem solved by
//! the Hungarian algorithm.

use crate::clustmodel::{ClusterParams, NormalizedData};
use crate::error::Result;

/// Solve max-sum assignment: returns `perm` with `perm[row] = col` maximizing
/// `sum(score[row][perm[row]])`. Scores may be -inf; rows/cols are square.
pub fn best_assignment(score: &[Vec<f64>]) -> Vec<usize> {
    let n = score.len();
    if n == 0 {
        return Vec::new();
    }
    // Hungarian algorithm on costs = -score, with potentials.
    const BIG: f64 = 1e100;
    let cost = |i: usize, j: usize| -> f64 {
        let s = score[i][j];
        if s.is_finite() {
            -s
        } else {
            BIG
        }
    };
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // p[col] = row matched to col (1-based)
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
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
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
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            perm[p[j] - 1] = j - 1;
        }
    }
    perm
}

/// Find the label permutation maximizing the pivot likelihood
/// `p(Y | mu_perm(c*), Sigma_perm(c*))`: `perm[a]` is the sample cluster whose
/// parameters serve pivot label `a`.
pub fn pivot_permutation(
    pivot: &[usize],
    params: &[ClusterParams],
    data: &NormalizedData,
) -> Result<Vec<usize>> {
    let n_labels = params.len();
    let mut score = vec![vec![0.0f64; n_labels]; n_labels];
    for (i, y) in data.y.iter().enumerate() {
        let a = pivot[i];
        for b in 0..n_labels {
            score[a][b] += params[b].ln_density(y)?;
        }
    }
    Ok(best_assignment(&score))
}

/// Apply a pivot permutation to a draw: `params'[a] = params[perm[a]]` and
/// assignments move to the label now holding their old parameters.
pub fn apply_permutation(
    perm: &[usize],
    params: &[ClusterParams],
    assign: &[usize],
) -> (Vec<ClusterParams>, Vec<usize>) {
    let n = perm.len();
    let mut inverse = vec![0usize; n];
    for (a, &b) in perm.iter().enumerate() {
        inverse[b] = a;
    }
    let new_params: Vec<ClusterParams> = perm.iter().map(|&b| params[b].clone()).collect();
    let new_assign: Vec<usize> = assign.iter().map(|&c| inverse[c]).collect();
    (new_params, new_assign)
}
