//! Classical entropic Gromov-Wasserstein solver and exhaustive permutation
//! oracles for tiny instances.
//!
//! The solver alternates between linearizing the quadratic objective around
//! the current plan and projecting back onto the coupling polytope with an
//! entropic OT solve. The linearized cost is the negated cross term
//! -2 D_X Pi_k D_Y of the squared loss; the constant terms depend only on
//! the (fixed) marginals and are dropped.

use itertools::Itertools;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::annealing::AnnealSchedule;
use crate::error::{GwError, Result};
use crate::geometry::DistanceMatrix;
use crate::sinkhorn::{sinkhorn_solve_warm, Coupling};

/// Hard assignment: a bijection on {0..N-1}.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    pub mapping: Vec<usize>,
}

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &v in &mapping {
            if v >= n || seen[v] {
                return Err(GwError::invalid(format!(
                    "mapping is not a bijection on 0..{n}"
                )));
            }
            seen[v] = true;
        }
        Ok(Permutation { mapping })
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    /// The coupling supported on this permutation with uniform measure.
    pub fn to_coupling(&self) -> Coupling {
        let n = self.len();
        let mut plan = Array2::zeros((n, n));
        for (i, &j) in self.mapping.iter().enumerate() {
            plan[[i, j]] = 1.0 / n as f64;
        }
        Coupling {
            plan,
            mu: Array1::from_elem(n, 1.0 / n as f64),
            nu: Array1::from_elem(n, 1.0 / n as f64),
        }
    }
}

/// Result of `entropic_gw_solve`.
#[derive(Debug, Clone)]
pub struct GwResult {
    pub coupling: Coupling,
    pub gw_loss: f64,
    pub outer_iterations: usize,
    /// Measure-weighted GW loss after each outer iteration.
    pub loss_trace: Vec<f64>,
}

/// Measure-weighted squared GW discrepancy
/// sum_{i,j,i',j'} (D_X[i,i'] - D_Y[j,j'])^2 Pi[i,j] Pi[i',j'],
/// evaluated through its O(N^3) expansion.
pub fn gw_loss(dx: &DistanceMatrix, dy: &DistanceMatrix, coupling: &Coupling) -> Result<f64> {
    let n = dx.len();
    let m = dy.len();
    if coupling.plan.dim() != (n, m) {
        return Err(GwError::shape(
            format!("{n} x {m}"),
            format!("{:?}", coupling.plan.dim()),
            "gw_loss",
        ));
    }
    let plan = &coupling.plan;
    let p = plan.sum_axis(ndarray::Axis(1));
    let q = plan.sum_axis(ndarray::Axis(0));
    let dx2 = dx.values.mapv(|v| v * v);
    let dy2 = dy.values.mapv(|v| v * v);
    let term_x = p.dot(&dx2.dot(&p));
    let term_y = q.dot(&dy2.dot(&q));
    let cross = dx.values.dot(plan).dot(&dy.values);
    let term_xy: f64 = cross.iter().zip(plan.iter()).map(|(c, p)| c * p).sum();
    Ok(term_x + term_y - 2.0 * term_xy)
}

/// Configuration of the outer/inner loops of `entropic_gw_solve`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EgwConfig {
    pub epsilon: f64,
    pub outer_iters: usize,
    /// Outer stop: plan-change Frobenius norm threshold.
    pub outer_tol: f64,
    pub inner_max_iters: usize,
    pub inner_tol: f64,
    /// Optional epsilon schedule over outer iterations; overrides `epsilon`.
    #[serde(default)]
    pub anneal: Option<AnnealSchedule>,
}

impl Default for EgwConfig {
    fn default() -> Self {
        EgwConfig {
            epsilon: 0.05,
            outer_iters: 200,
            outer_tol: 1e-7,
            inner_max_iters: 2000,
            inner_tol: 1e-6,
            anneal: None,
        }
    }
}

/// Entropic GW: a sequence of entropy-regularized linear OT projections of
/// the linearized objective, starting from the product coupling.
pub fn entropic_gw_solve(
    dx: &DistanceMatrix,
    dy: &DistanceMatrix,
    mu: &Array1<f64>,
    nu: &Array1<f64>,
    config: &EgwConfig,
) -> Result<GwResult> {
    let n = dx.len();
    let m = dy.len();
    if mu.len() != n || nu.len() != m {
        return Err(GwError::shape(
            format!("marginals of length {n} and {m}"),
            format!("{} and {}", mu.len(), nu.len()),
            "entropic_gw_solve",
        ));
    }
    if config.anneal.is_none() && !(config.epsilon > 0.0) {
        return Err(GwError::invalid(format!(
            "epsilon must be positive, got {}",
            config.epsilon
        )));
    }

    let mut plan = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            plan[[i, j]] = mu[i] * nu[j];
        }
    }
    let mut coupling = Coupling {
        plan,
        mu: mu.clone(),
        nu: nu.clone(),
    };
    let mut loss_trace = Vec::new();
    let mut g_warm: Option<Array1<f64>> = None;
    let mut outer_iterations = 0;
    for k in 0..config.outer_iters {
        outer_iterations = k + 1;
        let eps = match &config.anneal {
            Some(s) => s.epsilon_at(k),
            None => config.epsilon,
        };
        let cost = -2.0 * dx.values.dot(&coupling.plan).dot(&dy.values);
        let solved = sinkhorn_solve_warm(
            &cost,
            mu,
            nu,
            eps,
            config.inner_max_iters,
            config.inner_tol,
            g_warm.as_ref(),
        )
        .map_err(|e| {
            GwError::numerical(format!(
                "inner sinkhorn failed at outer iteration {k} (eps={eps}): {e}"
            ))
        })?;
        let change = (&solved.coupling.plan - &coupling.plan)
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        g_warm = Some(&solved.log_v * eps);
        coupling = solved.coupling;
        loss_trace.push(gw_loss(dx, dy, &coupling)?);
        if change <= config.outer_tol {
            break;
        }
    }
    let final_loss = *loss_trace.last().unwrap_or(&f64::NAN);
    Ok(GwResult {
        coupling,
        gw_loss: final_loss,
        outer_iterations,
        loss_trace,
    })
}

/// Norm used by the exhaustive permutation oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QapNorm {
    /// ||D_X - P D_Y P^T||_F^2: hard-assignment GW objective.
    FrobeniusSq,
    /// ||D_X - P D_Y P^T||_inf: Gromov-Hausdorff distortion.
    Sup,
}

/// Distortion of a candidate permutation under the chosen norm.
pub fn permutation_distortion(
    dx: &DistanceMatrix,
    dy: &DistanceMatrix,
    perm: &[usize],
    norm: QapNorm,
) -> f64 {
    let n = perm.len();
    let mut acc: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let diff = dx.values[[i, j]] - dy.values[[perm[i], perm[j]]];
            match norm {
                QapNorm::FrobeniusSq => acc += diff * diff,
                QapNorm::Sup => acc = acc.max(diff.abs()),
            }
        }
    }
    acc
}

/// Exact minimizer over all N! permutations; guarded to N <= 10.
pub fn brute_force_qap(
    dx: &DistanceMatrix,
    dy: &DistanceMatrix,
    norm: QapNorm,
) -> Result<(Permutation, f64)> {
    let n = dx.len();
    if dy.len() != n {
        return Err(GwError::shape(
            format!("{n} x {n}"),
            format!("{} x {}", dy.len(), dy.len()),
            "brute_force_qap",
        ));
    }
    if n > 10 {
        return Err(GwError::invalid(format!(
            "brute_force_qap enumerates N! permutations and refuses N={n} > 10"
        )));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for perm in (0..n).permutations(n) {
        let value = permutation_distortion(dx, dy, &perm, norm);
        match &best {
            Some((_, v)) if *v <= value => {}
            _ => best = Some((perm, value)),
        }
    }
    let (mapping, value) = best.expect("N >= 1 yields at least one permutation");
    Ok((Permutation::new(mapping)?, value))
}

/// Row-wise argmax with smallest-index tie break.
pub fn row_argmax(plan: &Array2<f64>) -> Vec<usize> {
    plan.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Round a plan to a permutation by row-argmax; fails if the argmaxes
/// collide (the plan is not close to a permutation).
pub fn round_to_permutation(plan: &Array2<f64>) -> Result<Permutation> {
    let (n, m) = plan.dim();
    if n != m {
        return Err(GwError::shape(
            "square plan".to_string(),
            format!("{n} x {m}"),
            "round_to_permutation",
        ));
    }
    Permutation::new(row_argmax(plan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::MetricKind;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn uniform(n: usize) -> Array1<f64> {
        Array1::from_elem(n, 1.0 / n as f64)
    }

    fn random_distance_matrix(rng: &mut ChaCha8Rng, n: usize) -> DistanceMatrix {
        let mut values = Array2::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                let v = rng.random_range(0.1..2.0);
                values[[i, j]] = v;
                values[[j, i]] = v;
            }
        }
        DistanceMatrix::new(values, MetricKind::Precomputed).unwrap()
    }

    fn permuted(dx: &DistanceMatrix, perm: &[usize]) -> DistanceMatrix {
        // D_Y with Y_perm[i] matching X_i: D_Y[perm[i], perm[j]] = D_X[i, j].
        let n = perm.len();
        let mut values = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                values[[perm[i], perm[j]]] = dx.values[[i, j]];
            }
        }
        DistanceMatrix::new(values, MetricKind::Precomputed).unwrap()
    }

    #[test]
    fn gw_loss_zero_for_identical_spaces_identity_plan() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dx = random_distance_matrix(&mut rng, 5);
        let id = Permutation::new((0..5).collect()).unwrap();
        let loss = gw_loss(&dx, &dx, &id.to_coupling()).unwrap();
        assert!(loss.abs() <= 1e-12);
    }

    #[test]
    fn gw_loss_matches_quadruple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dx = random_distance_matrix(&mut rng, 3);
        let dy = random_distance_matrix(&mut rng, 3);
        let raw = Array2::from_shape_fn((3, 3), |_| rng.random_range(0.1..1.0));
        let total: f64 = raw.sum();
        let plan = raw / total;
        let coupling = Coupling {
            plan: plan.clone(),
            mu: plan.sum_axis(ndarray::Axis(1)),
            nu: plan.sum_axis(ndarray::Axis(0)),
        };
        let mut expect = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                for i2 in 0..3 {
                    for j2 in 0..3 {
                        let diff = dx.values[[i, i2]] - dy.values[[j, j2]];
                        expect += diff * diff * plan[[i, j]] * plan[[i2, j2]];
                    }
                }
            }
        }
        let got = gw_loss(&dx, &dy, &coupling).unwrap();
        assert!((got - expect).abs() <= 1e-10, "got={got} expect={expect}");
    }

    #[test]
    fn gw_loss_constant_offdiagonal_offset_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 4;
        let dx = random_distance_matrix(&mut rng, n);
        let offset = 0.3;
        let mut dy_values = dx.values.clone();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    dy_values[[i, j]] += offset;
                }
            }
        }
        let dy = DistanceMatrix::new(dy_values, MetricKind::Precomputed).unwrap();
        let id = Permutation::new((0..n).collect()).unwrap();
        let loss = gw_loss(&dx, &dy, &id.to_coupling()).unwrap();
        // Identity-supported uniform plan: (1/N^2) * (N^2 - N) * offset^2.
        let expect = offset * offset * (n * n - n) as f64 / (n * n) as f64;
        assert!((loss - expect).abs() <= 1e-12, "loss={loss} expect={expect}");
    }

    #[test]
    fn egw_recovers_identity_on_well_separated_points() {
        // 30 well-separated collinear points; identity is the unique optimum.
        let n = 30;
        let mut pts = Array2::zeros((n, 1));
        for i in 0..n {
            // Irregular spacing so no nontrivial isometry exists.
            pts[[i, 0]] = (i as f64).powf(1.3) * 3.0;
        }
        let data = crate::geometry::Dataset::new(pts, None).unwrap();
        let dx = crate::geometry::pairwise_distances(&data, MetricKind::Euclidean)
            .unwrap()
            .normalized_unit_median()
            .unwrap();
        let config = EgwConfig {
            epsilon: 0.005,
            outer_iters: 100,
            ..EgwConfig::default()
        };
        let result = entropic_gw_solve(&dx, &dx, &uniform(n), &uniform(n), &config).unwrap();
        let assignment = row_argmax(&result.coupling.plan);
        let correct = assignment.iter().enumerate().filter(|(i, &j)| *i == j).count();
        assert_eq!(correct, n, "assignment {assignment:?}");
    }

    #[test]
    fn egw_close_to_brute_force_on_planted_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 6;
        let dx = random_distance_matrix(&mut rng, n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let dy = permuted(&dx, &perm);
        let anneal = AnnealSchedule::new(
            crate::annealing::ScheduleKind::Geometric,
            1.0,
            1e-3,
            60,
            None,
        )
        .unwrap();
        let config = EgwConfig {
            anneal: Some(anneal),
            outer_iters: 80,
            outer_tol: 0.0,
            ..EgwConfig::default()
        };
        let result = entropic_gw_solve(&dx, &dy, &uniform(n), &uniform(n), &config).unwrap();
        let (_, oracle) = brute_force_qap(&dx, &dy, QapNorm::FrobeniusSq).unwrap();
        assert!(oracle.abs() <= 1e-12, "planted optimum must be 0");
        let rounded = round_to_permutation(&result.coupling.plan).unwrap();
        let loss = gw_loss(&dx, &dy, &rounded.to_coupling()).unwrap();
        assert!(loss <= 0.05 * oracle + 1e-9, "loss={loss} oracle={oracle}");
    }

    #[test]
    fn egw_loss_trace_descends() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dx = random_distance_matrix(&mut rng, 8);
        let dy = random_distance_matrix(&mut rng, 8);
        let config = EgwConfig {
            epsilon: 0.1,
            outer_iters: 40,
            ..EgwConfig::default()
        };
        let result = entropic_gw_solve(&dx, &dy, &uniform(8), &uniform(8), &config).unwrap();
        assert!(result.loss_trace.last().unwrap() <= &result.loss_trace[0]);
    }

    #[test]
    fn brute_force_identity_when_spaces_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dx = random_distance_matrix(&mut rng, 4);
        let (_, value) = brute_force_qap(&dx, &dx, QapNorm::FrobeniusSq).unwrap();
        assert!(value.abs() <= 1e-12);
    }

    #[test]
    fn brute_force_finds_planted_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dx = random_distance_matrix(&mut rng, 4);
        let planted = vec![2, 0, 3, 1];
        let dy = permuted(&dx, &planted);
        for norm in [QapNorm::FrobeniusSq, QapNorm::Sup] {
            let (perm, value) = brute_force_qap(&dx, &dy, norm).unwrap();
            assert!(value.abs() <= 1e-12, "{norm:?}");
            assert!(permutation_distortion(&dx, &dy, &perm.mapping, norm) <= 1e-12);
        }
    }

    #[test]
    fn brute_force_refuses_large_instances() {
        let dx = DistanceMatrix::new(Array2::zeros((11, 11)), MetricKind::Precomputed).unwrap();
        let err = brute_force_qap(&dx, &dx, QapNorm::Sup).unwrap_err();
        assert!(err.to_string().contains("11"));
    }

    #[test]
    fn permutation_rejects_non_bijection() {
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
        assert!(Permutation::new(vec![0, 3]).is_err());
    }
}
