//! Differentiable soft ranking via Euclidean projection onto the
//! permutahedron.
//!
//! `soft_rank(theta, delta)` projects theta/delta onto the permutahedron
//! generated by (1, ..., n). The projection reduces to a sort followed by
//! isotonic regression (pool-adjacent-violators), giving an exact
//! O(n log n) forward pass and a sparse blockwise Jacobian. As delta -> 0
//! the soft ranks converge to hard ranks (ties averaged); as delta -> inf
//! they flatten to the constant (n+1)/2.

use serde::{Deserialize, Serialize};

use crate::error::{GwError, Result};

/// Ranking direction: `Ascending` gives rank ~1 to the smallest entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankDirection {
    Ascending,
    Descending,
}

/// Output of `soft_rank`, carrying what the Jacobian-vector product needs.
#[derive(Debug, Clone)]
pub struct SoftRankResult {
    pub ranks: Vec<f64>,
    /// Partition of the *sorted* index range into constant isotonic blocks,
    /// as (start, len) pairs.
    pub blocks: Vec<(usize, usize)>,
    /// Permutation sorting the input in descending order:
    /// sort_permutation[k] = original index of the k-th largest entry.
    pub sort_permutation: Vec<usize>,
    pub delta: f64,
    pub direction: RankDirection,
}

/// Best non-increasing fit to `y` in least squares, via
/// pool-adjacent-violators. Returns the fitted vector and the constant
/// blocks as (start, len) pairs.
pub fn isotonic_regression(y: &[f64]) -> Result<(Vec<f64>, Vec<(usize, usize)>)> {
    if y.is_empty() {
        return Err(GwError::invalid("isotonic_regression: empty input"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(GwError::invalid("isotonic_regression: non-finite input"));
    }
    // Stack of (block mean, block length). A violation is an earlier block
    // whose mean is *smaller* than its successor's; merging restores the
    // non-increasing property.
    let mut means: Vec<f64> = Vec::with_capacity(y.len());
    let mut lens: Vec<usize> = Vec::with_capacity(y.len());
    for &v in y {
        means.push(v);
        lens.push(1);
        while means.len() > 1 && means[means.len() - 2] < means[means.len() - 1] {
            let (m2, l2) = (means.pop().unwrap(), lens.pop().unwrap());
            let k = means.len() - 1;
            let l1 = lens[k];
            means[k] = (means[k] * l1 as f64 + m2 * l2 as f64) / (l1 + l2) as f64;
            lens[k] = l1 + l2;
        }
    }
    let mut solution = Vec::with_capacity(y.len());
    let mut blocks = Vec::with_capacity(means.len());
    let mut start = 0;
    for (m, l) in means.iter().zip(lens.iter()) {
        blocks.push((start, *l));
        for _ in 0..*l {
            solution.push(*m);
        }
        start += l;
    }
    Ok((solution, blocks))
}

/// Soft ranks of `theta` with softness `delta`.
pub fn soft_rank(theta: &[f64], delta: f64, direction: RankDirection) -> Result<SoftRankResult> {
    if !(delta > 0.0) {
        return Err(GwError::invalid(format!(
            "soft_rank requires delta > 0, got {delta}"
        )));
    }
    if theta.is_empty() {
        return Err(GwError::invalid("soft_rank: empty input"));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(GwError::invalid("soft_rank: non-finite input"));
    }
    let n = theta.len();

    // Project z = theta/delta onto the permutahedron of (1..n):
    // sort z descending, isotonic-fit (sorted - (n, n-1, ..., 1)), subtract.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| theta[b].total_cmp(&theta[a]).then(a.cmp(&b)));
    let mut diffs = Vec::with_capacity(n);
    for (k, &idx) in order.iter().enumerate() {
        let w = (n - k) as f64; // target vector sorted descending
        diffs.push(theta[idx] / delta - w);
    }
    let (fit, blocks) = isotonic_regression(&diffs)?;

    let mut ranks = vec![0.0; n];
    for (k, &idx) in order.iter().enumerate() {
        let asc = theta[idx] / delta - fit[k];
        ranks[idx] = match direction {
            RankDirection::Ascending => asc,
            RankDirection::Descending => (n + 1) as f64 - asc,
        };
    }
    Ok(SoftRankResult {
        ranks,
        blocks,
        sort_permutation: order,
        delta,
        direction,
    })
}

/// Jacobian-vector product of `soft_rank` at the point that produced
/// `result`. Within each isotonic block the Jacobian acts as
/// (identity - block averaging) / delta, conjugated by the sort permutation;
/// the operator is symmetric, so this doubles as the vector-Jacobian product.
pub fn soft_rank_jvp(result: &SoftRankResult, tangent: &[f64], delta: f64) -> Result<Vec<f64>> {
    if !(delta > 0.0) {
        return Err(GwError::invalid(format!(
            "soft_rank_jvp requires delta > 0, got {delta}"
        )));
    }
    let n = result.sort_permutation.len();
    if tangent.len() != n {
        return Err(GwError::shape(
            format!("tangent of length {n}"),
            format!("{}", tangent.len()),
            "soft_rank_jvp",
        ));
    }
    if result.ranks.len() != n || result.blocks.iter().map(|b| b.1).sum::<usize>() != n {
        return Err(GwError::InvalidState(
            "soft_rank_jvp: result blocks do not cover the input".to_string(),
        ));
    }
    let sorted_tangent: Vec<f64> = result
        .sort_permutation
        .iter()
        .map(|&idx| tangent[idx] / delta)
        .collect();
    let mut out_sorted = vec![0.0; n];
    for &(start, len) in &result.blocks {
        let mean: f64 = sorted_tangent[start..start + len].iter().sum::<f64>() / len as f64;
        for k in start..start + len {
            out_sorted[k] = sorted_tangent[k] - mean;
        }
    }
    let mut out = vec![0.0; n];
    let sign = match result.direction {
        RankDirection::Ascending => 1.0,
        RankDirection::Descending => -1.0,
    };
    for (k, &idx) in result.sort_permutation.iter().enumerate() {
        out[idx] = sign * out_sorted[k];
    }
    Ok(out)
}

/// Apply `soft_rank` to each row of a square matrix, diagonal included.
pub fn soft_rank_rows(
    matrix: &ndarray::Array2<f64>,
    delta: f64,
    direction: RankDirection,
) -> Result<(ndarray::Array2<f64>, Vec<SoftRankResult>)> {
    let (n, m) = matrix.dim();
    let mut ranks = ndarray::Array2::zeros((n, m));
    let mut results = Vec::with_capacity(n);
    for i in 0..n {
        let row: Vec<f64> = matrix.row(i).to_vec();
        let r = soft_rank(&row, delta, direction)?;
        for j in 0..m {
            ranks[[i, j]] = r.ranks[j];
        }
        results.push(r);
    }
    Ok((ranks, results))
}
