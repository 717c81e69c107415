//! Alignment-quality metrics: FOSCTTM, barycentric projection, and
//! label-transfer accuracy.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::egw::row_argmax;
use crate::error::{GwError, Result};
use crate::geometry::MetricKind;
use crate::sinkhorn::Coupling;

/// Fraction of samples closer than the true match, averaged over both
/// directions. 0 is perfect alignment; independent point sets score ~0.5.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoscttmReport {
    pub score: f64,
    pub per_point_p: Vec<f64>,
    pub per_point_q: Vec<f64>,
}

fn metric_distance(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>, metric: MetricKind) -> f64 {
    match metric {
        MetricKind::Euclidean => {
            let mut s = 0.0;
            for (x, y) in a.iter().zip(b.iter()) {
                let d = x - y;
                s += d * d;
            }
            s.sqrt()
        }
        MetricKind::SquaredEuclidean => {
            let mut s = 0.0;
            for (x, y) in a.iter().zip(b.iter()) {
                let d = x - y;
                s += d * d;
            }
            s
        }
        MetricKind::CosineDissimilarity => {
            let dot = a.dot(&b);
            let na = a.dot(&a).sqrt();
            let nb = b.dot(&b).sqrt();
            1.0 - dot / (na * nb)
        }
        _ => unreachable!("validated by foscttm"),
    }
}

/// FOSCTTM of two equally-sized point sets whose rows are in ground-truth
/// correspondence. Ties do not count against the match (strict inequality).
pub fn foscttm(u: &Array2<f64>, v: &Array2<f64>, metric: MetricKind) -> Result<FoscttmReport> {
    if u.dim() != v.dim() {
        return Err(GwError::shape(
            format!("{:?}", u.dim()),
            format!("{:?}", v.dim()),
            "foscttm",
        ));
    }
    if matches!(metric, MetricKind::Geodesic | MetricKind::Precomputed) {
        return Err(GwError::invalid(
            "foscttm supports feature-space metrics only",
        ));
    }
    let n = u.nrows();
    if n == 0 {
        return Err(GwError::invalid("foscttm: empty input"));
    }
    let mut per_point_p = Vec::with_capacity(n);
    let mut per_point_q = Vec::with_capacity(n);
    for i in 0..n {
        let d_true = metric_distance(u.row(i), v.row(i), metric);
        let closer = (0..n)
            .filter(|&j| metric_distance(u.row(i), v.row(j), metric) < d_true)
            .count();
        per_point_p.push(closer as f64 / n as f64);
    }
    for i in 0..n {
        let d_true = metric_distance(v.row(i), u.row(i), metric);
        let closer = (0..n)
            .filter(|&j| metric_distance(v.row(i), u.row(j), metric) < d_true)
            .count();
        per_point_q.push(closer as f64 / n as f64);
    }
    let score = per_point_p
        .iter()
        .zip(per_point_q.iter())
        .map(|(p, q)| p + q)
        .sum::<f64>()
        / (2.0 * n as f64);
    Ok(FoscttmReport {
        score,
        per_point_p,
        per_point_q,
    })
}

/// Represent each source point as the plan-weighted average of target
/// points, with rows normalized by their marginal mass so every projection
/// is a convex combination of target rows.
pub fn barycentric_project(coupling: &Coupling, y_points: &Array2<f64>) -> Result<Array2<f64>> {
    let (n, m) = coupling.plan.dim();
    if y_points.nrows() != m {
        return Err(GwError::shape(
            format!("{m} target rows"),
            format!("{}", y_points.nrows()),
            "barycentric_project",
        ));
    }
    let d = y_points.ncols();
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        let mass: f64 = coupling.plan.row(i).sum();
        if mass <= 0.0 {
            return Err(GwError::invalid(format!(
                "barycentric_project: row {i} of the coupling has zero mass"
            )));
        }
        for j in 0..m {
            let w = coupling.plan[[i, j]] / mass;
            if w == 0.0 {
                continue;
            }
            for c in 0..d {
                out[[i, c]] += w * y_points[[j, c]];
            }
        }
    }
    Ok(out)
}

/// Label-transfer accuracy of the row-argmax assignment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelTransfer {
    pub accuracy: f64,
    /// Rows whose argmax was tied (broken toward the smallest column index).
    pub tied_rows: usize,
}

pub fn label_transfer_accuracy(
    coupling: &Coupling,
    labels_x: &[i64],
    labels_y: &[i64],
) -> Result<LabelTransfer> {
    let (n, m) = coupling.plan.dim();
    if labels_x.len() != n || labels_y.len() != m {
        return Err(GwError::invalid(format!(
            "label_transfer_accuracy: expected {n} and {m} labels, got {} and {}",
            labels_x.len(),
            labels_y.len()
        )));
    }
    let assignment = row_argmax(&coupling.plan);
    let mut tied_rows = 0;
    for (i, &j) in assignment.iter().enumerate() {
        let best = coupling.plan[[i, j]];
        let ties = coupling.plan.row(i).iter().filter(|&&v| v == best).count();
        if ties > 1 {
            tied_rows += 1;
        }
    }
    if tied_rows > 0 {
        log::warn!("label transfer: {tied_rows} rows had tied argmax entries");
    }
    let correct = assignment
        .iter()
        .enumerate()
        .filter(|(i, &j)| labels_x[*i] == labels_y[j])
        .count();
    Ok(LabelTransfer {
        accuracy: correct as f64 / n as f64,
        tied_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_sets_score_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let u = Array2::from_shape_fn((20, 3), |_| rng.random_range(-1.0..1.0));
        let r = foscttm(&u, &u, MetricKind::Euclidean).unwrap();
        assert_eq!(r.score, 0.0);
        assert!(r.per_point_p.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn two_point_reversal_scores_half() {
        let u = array![[0.0, 0.0], [1.0, 0.0]];
        let v = array![[1.0, 0.0], [0.0, 0.0]];
        let r = foscttm(&u, &v, MetricKind::Euclidean).unwrap();
        assert!((r.score - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn symmetry_in_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = Array2::from_shape_fn((15, 4), |_| rng.random_range(-1.0..1.0));
        let v = Array2::from_shape_fn((15, 4), |_| rng.random_range(-1.0..1.0));
        let a = foscttm(&u, &v, MetricKind::Euclidean).unwrap();
        let b = foscttm(&v, &u, MetricKind::Euclidean).unwrap();
        assert!((a.score - b.score).abs() <= 1e-12);
    }

    #[test]
    fn rejects_size_mismatch() {
        let u = Array2::<f64>::zeros((3, 2));
        let v = Array2::<f64>::zeros((4, 2));
        assert!(foscttm(&u, &v, MetricKind::Euclidean).is_err());
    }

    #[test]
    fn permutation_coupling_projects_to_permuted_targets() {
        let perm = crate::egw::Permutation::new(vec![2, 0, 1]).unwrap();
        let c = perm.to_coupling();
        let y = array![[0.0, 0.0], [1.0, 1.0], [2.0, 4.0]];
        let proj = barycentric_project(&c, &y).unwrap();
        assert_eq!(proj, array![[2.0, 4.0], [0.0, 0.0], [1.0, 1.0]]);
    }

    #[test]
    fn uniform_coupling_projects_to_centroid() {
        let plan = Array2::from_elem((3, 4), 1.0 / 12.0);
        let c = Coupling {
            plan,
            mu: Array1::from_elem(3, 1.0 / 3.0),
            nu: Array1::from_elem(4, 0.25),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
        let centroid = y.sum_axis(ndarray::Axis(0)) / 4.0;
        let proj = barycentric_project(&c, &y).unwrap();
        for i in 0..3 {
            for c_idx in 0..2 {
                assert!((proj[[i, c_idx]] - centroid[c_idx]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_mass_row_is_an_error() {
        let mut plan = Array2::from_elem((2, 2), 0.5);
        plan.row_mut(1).fill(0.0);
        let c = Coupling {
            plan,
            mu: Array1::from_elem(2, 0.5),
            nu: Array1::from_elem(2, 0.5),
        };
        let err = barycentric_project(&c, &Array2::zeros((2, 2))).unwrap_err();
        assert!(err.to_string().contains("row 1"));
    }

    #[test]
    fn label_transfer_trivial_cases() {
        let id = crate::egw::Permutation::new(vec![0, 1, 2]).unwrap();
        let c = id.to_coupling();
        let labels = vec![5, 5, 7];
        let r = label_transfer_accuracy(&c, &labels, &labels).unwrap();
        assert_eq!(r.accuracy, 1.0);

        // Every row mapped to a wrong-label column.
        let swap = crate::egw::Permutation::new(vec![1, 0]).unwrap();
        let c = swap.to_coupling();
        let r = label_transfer_accuracy(&c, &[0, 1], &[0, 1]).unwrap();
        assert_eq!(r.accuracy, 0.0);
    }

    #[test]
    fn missing_labels_rejected() {
        let id = crate::egw::Permutation::new(vec![0, 1]).unwrap();
        let c = id.to_coupling();
        assert!(label_transfer_accuracy(&c, &[1], &[1, 2]).is_err());
    }
}
