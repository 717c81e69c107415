//! Differentiable Sinkhorn layer and the gradient chain from alignment
//! losses through the coupling back to the embeddings.
//!
//! Differentiation is exact reverse-mode through a *fixed* number of
//! log-domain Sinkhorn iterations. The unrolled map is deterministic, needs
//! no linear-system solve, and agrees with implicit differentiation at the
//! converged fixed point.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{GwError, Result};
use crate::sinkhorn::{plan_from_potentials, Coupling};
use crate::softrank::{soft_rank_jvp, soft_rank_rows, RankDirection};

/// Fixed ground cost measured on embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundCost {
    /// c(z, z') = ||z - z'||^2
    SqEuclidean,
    /// c(z, z') = -z . z', negated so minimization pulls matched rows together.
    NegInner,
}

impl std::str::FromStr for GroundCost {
    type Err = GwError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sq_euclidean" => Ok(GroundCost::SqEuclidean),
            "neg_inner" => Ok(GroundCost::NegInner),
            other => Err(GwError::invalid(format!("unknown ground cost '{other}'"))),
        }
    }
}

/// Pairwise ground cost between two embedding matrices.
pub fn cost_from_embeddings(
    zx: &Array2<f64>,
    zy: &Array2<f64>,
    ground: GroundCost,
) -> Result<Array2<f64>> {
    if zx.ncols() != zy.ncols() {
        return Err(GwError::shape(
            format!("embedding dim {}", zx.ncols()),
            format!("{}", zy.ncols()),
            "cost_from_embeddings",
        ));
    }
    match ground {
        GroundCost::NegInner => Ok(-zx.dot(&zy.t())),
        GroundCost::SqEuclidean => {
            // Direct summation: exact zeros on matched rows, no cancellation.
            let (n, m) = (zx.nrows(), zy.nrows());
            let mut cost = Array2::zeros((n, m));
            for i in 0..n {
                let xi = zx.row(i);
                for j in 0..m {
                    let yj = zy.row(j);
                    let mut s = 0.0;
                    for (a, b) in xi.iter().zip(yj.iter()) {
                        let d = a - b;
                        s += d * d;
                    }
                    cost[[i, j]] = s;
                }
            }
            Ok(cost)
        }
    }
}

/// Exact gradients of a scalar loss with respect to both embedding matrices,
/// given the loss gradient on the cost matrix.
pub fn cost_backward(
    zx: &Array2<f64>,
    zy: &Array2<f64>,
    ground: GroundCost,
    grad_cost: &Array2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if grad_cost.dim() != (zx.nrows(), zy.nrows()) {
        return Err(GwError::shape(
            format!("{} x {}", zx.nrows(), zy.nrows()),
            format!("{:?}", grad_cost.dim()),
            "cost_backward",
        ));
    }
    match ground {
        GroundCost::NegInner => Ok((-grad_cost.dot(zy), -grad_cost.t().dot(zx))),
        GroundCost::SqEuclidean => {
            let row_sums = grad_cost.sum_axis(Axis(1));
            let col_sums = grad_cost.sum_axis(Axis(0));
            let mut gx = grad_cost.dot(zy) * -2.0;
            for (i, mut row) in gx.rows_mut().into_iter().enumerate() {
                let xi = zx.row(i);
                for (a, b) in row.iter_mut().zip(xi.iter()) {
                    *a += 2.0 * row_sums[i] * b;
                }
            }
            let mut gy = grad_cost.t().dot(zx) * -2.0;
            for (j, mut row) in gy.rows_mut().into_iter().enumerate() {
                let yj = zy.row(j);
                for (a, b) in row.iter_mut().zip(yj.iter()) {
                    *a += 2.0 * col_sums[j] * b;
                }
            }
            Ok((gx, gy))
        }
    }
}

/// Record of an unrolled Sinkhorn run: everything the exact backward pass
/// needs to replay the iterations in reverse.
#[derive(Debug, Clone)]
pub struct DiffOtTape {
    cost: Array2<f64>,
    epsilon: f64,
    iters: usize,
    /// f after each iteration; f_hist[t] is the row potential of iteration t+1.
    f_hist: Vec<Array1<f64>>,
    /// g before/after each iteration; g_hist[0] is the zero initializer.
    g_hist: Vec<Array1<f64>>,
}

impl DiffOtTape {
    pub fn iterations(&self) -> usize {
        self.iters
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// Run exactly `iters` log-domain Sinkhorn iterations (no early stop, so the
/// computation graph is static) and record the tape.
pub fn sinkhorn_forward_unrolled(
    cost: &Array2<f64>,
    mu: &Array1<f64>,
    nu: &Array1<f64>,
    epsilon: f64,
    iters: usize,
) -> Result<(Coupling, DiffOtTape)> {
    let (n, m) = cost.dim();
    if iters < 1 {
        return Err(GwError::invalid("sinkhorn_forward_unrolled needs iters >= 1"));
    }
    if !(epsilon > 0.0) {
        return Err(GwError::invalid(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if !cost.iter().all(|v| v.is_finite()) {
        return Err(GwError::invalid("cost matrix has non-finite entries"));
    }
    if mu.len() != n || nu.len() != m {
        return Err(GwError::shape(
            format!("marginals of length {n} and {m}"),
            format!("{} and {}", mu.len(), nu.len()),
            "sinkhorn_forward_unrolled",
        ));
    }
    let log_mu = mu.mapv(f64::ln);
    let log_nu = nu.mapv(f64::ln);
    let cost_std = crate::sinkhorn::owned_standard(cost);
    let cost_t = crate::sinkhorn::owned_standard(&cost.t().to_owned());

    let mut f = Array1::zeros(n);
    let mut g = Array1::<f64>::zeros(m);
    let mut scratch = Vec::new();
    let mut f_hist = Vec::with_capacity(iters);
    let mut g_hist = Vec::with_capacity(iters + 1);
    g_hist.push(g.clone());
    for _ in 0..iters {
        crate::sinkhorn::f_sweep(
            &cost_std,
            g.as_slice().unwrap(),
            log_mu.as_slice().unwrap(),
            epsilon,
            f.as_slice_mut().unwrap(),
            &mut scratch,
        );
        crate::sinkhorn::g_sweep(
            &cost_t,
            f.as_slice().unwrap(),
            log_nu.as_slice().unwrap(),
            epsilon,
            g.as_slice_mut().unwrap(),
            &mut scratch,
        );
        f_hist.push(f.clone());
        g_hist.push(g.clone());
    }
    let plan = plan_from_potentials(&cost_std, &f, &g, epsilon);
    if !plan.iter().all(|v| v.is_finite()) {
        return Err(GwError::numerical(format!(
            "unrolled sinkhorn produced a non-finite plan (eps={epsilon})"
        )));
    }
    Ok((
        Coupling {
            plan,
            mu: mu.clone(),
            nu: nu.clone(),
        },
        DiffOtTape {
            cost: cost.clone(),
            epsilon,
            iters,
            f_hist,
            g_hist,
        },
    ))
}

/// Exact reverse-mode gradient of the unrolled iteration:
/// grad_cost = (dPlan/dCost)^T . grad_plan for the fixed-iteration map.
pub fn sinkhorn_backward_unrolled(
    tape: &DiffOtTape,
    grad_plan: &Array2<f64>,
) -> Result<Array2<f64>> {
    let (n, m) = tape.cost.dim();
    if grad_plan.dim() != (n, m) {
        return Err(GwError::shape(
            format!("{n} x {m}"),
            format!("{:?}", grad_plan.dim()),
            "sinkhorn_backward_unrolled",
        ));
    }
    if tape.f_hist.len() != tape.iters || tape.g_hist.len() != tape.iters + 1 {
        return Err(GwError::InvalidState(
            "sinkhorn tape does not match its iteration count".to_string(),
        ));
    }
    let eps = tape.epsilon;
    let inv = 1.0 / eps;
    let cost = crate::sinkhorn::owned_standard(&tape.cost);
    let cost_t = crate::sinkhorn::owned_standard(&tape.cost.t().to_owned());
    let grad_plan = crate::sinkhorn::owned_standard(grad_plan);

    let mut f_bar = vec![0.0f64; n];
    let mut g_bar = vec![0.0f64; m];
    let mut c_bar = Array2::<f64>::zeros((n, m));
    let mut c_bar_t = Array2::<f64>::zeros((m, n));
    let mut scratch = vec![0.0f64; n.max(m)];

    // Plan node: plan_ij = exp((f_i + g_j - C_ij)/eps) at the final potentials.
    let f_last = &tape.f_hist[tape.iters - 1];
    let g_last = &tape.g_hist[tape.iters];
    {
        let gl = g_last.as_slice().unwrap();
        for i in 0..n {
            let fi = f_last[i];
            let row = cost.row(i);
            let row = row.as_slice().unwrap();
            let gp = grad_plan.row(i);
            let gp = gp.as_slice().unwrap();
            let out = c_bar.row_mut(i);
            let out = out.into_slice().unwrap();
            let mut acc = 0.0;
            for j in 0..m {
                let p = ((fi + gl[j] - row[j]) * inv).exp();
                let s = gp[j] * p * inv;
                acc += s;
                g_bar[j] += s;
                out[j] -= s;
            }
            f_bar[i] += acc;
        }
    }

    for t in (0..tape.iters).rev() {
        let ft = tape.f_hist[t].as_slice().unwrap();
        let g_prev = tape.g_hist[t].as_slice().unwrap();

        // g update: g_j = eps*log_nu_j - eps*LSE_i((f_i - C_ij)/eps).
        // Column softmax weights w_ij; dg_j/df_i = -w_ij, dg_j/dC_ij = +w_ij.
        // Columns of C are rows of C^T; accumulate into the transposed c_bar.
        for j in 0..m {
            let gbj = g_bar[j];
            if gbj == 0.0 {
                continue;
            }
            let col = cost_t.row(j);
            let col = col.as_slice().unwrap();
            let mut max = f64::NEG_INFINITY;
            for i in 0..n {
                let v = (ft[i] - col[i]) * inv;
                scratch[i] = v;
                if v > max {
                    max = v;
                }
            }
            let mut denom = 0.0;
            for s in scratch.iter_mut().take(n) {
                *s = (*s - max).exp();
                denom += *s;
            }
            let out = c_bar_t.row_mut(j);
            let out = out.into_slice().unwrap();
            let factor = gbj / denom;
            for i in 0..n {
                let w = scratch[i] * factor;
                f_bar[i] -= w;
                out[i] += w;
            }
        }

        // f update: f_i = eps*log_mu_i - eps*LSE_j((g_j - C_ij)/eps) at g_prev.
        // Row softmax weights v_ij; df_i/dg_j = -v_ij, df_i/dC_ij = +v_ij.
        let mut g_bar_next = vec![0.0f64; m];
        for i in 0..n {
            let fbi = f_bar[i];
            if fbi == 0.0 {
                continue;
            }
            let row = cost.row(i);
            let row = row.as_slice().unwrap();
            let mut max = f64::NEG_INFINITY;
            for j in 0..m {
                let v = (g_prev[j] - row[j]) * inv;
                scratch[j] = v;
                if v > max {
                    max = v;
                }
            }
            let mut denom = 0.0;
            for s in scratch.iter_mut().take(m) {
                *s = (*s - max).exp();
                denom += *s;
            }
            let out = c_bar.row_mut(i);
            let out = out.into_slice().unwrap();
            let factor = fbi / denom;
            for j in 0..m {
                let v = scratch[j] * factor;
                g_bar_next[j] -= v;
                out[j] += v;
            }
        }
        g_bar = g_bar_next;
        f_bar.fill(0.0);
    }
    // g_hist[0] is the constant zero initializer; its gradient is dropped.
    c_bar += &c_bar_t.t();
    Ok(c_bar)
}

fn check_square_symmetric(mat: &Array2<f64>, name: &str) -> Result<()> {
    let (n, m) = mat.dim();
    if n != m {
        return Err(GwError::shape(
            "square matrix".to_string(),
            format!("{n} x {m}"),
            name,
        ));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (mat[[i, j]] - mat[[j, i]]).abs() > 1e-9 {
                return Err(GwError::invalid(format!(
                    "{name} is asymmetric at ({i},{j})"
                )));
            }
        }
    }
    Ok(())
}

/// Gradient of ||D_X - Pi D_Y Pi^T||_F^2 with respect to Pi:
/// -2 (R + R^T) Pi D_Y with R = D_X - Pi D_Y Pi^T.
pub fn grad_gw_wrt_plan(
    dx: &Array2<f64>,
    dy: &Array2<f64>,
    plan: &Array2<f64>,
) -> Result<Array2<f64>> {
    check_square_symmetric(dx, "D_X")?;
    check_square_symmetric(dy, "D_Y")?;
    if plan.dim() != (dx.nrows(), dy.nrows()) {
        return Err(GwError::shape(
            format!("{} x {}", dx.nrows(), dy.nrows()),
            format!("{:?}", plan.dim()),
            "grad_gw_wrt_plan",
        ));
    }
    let pdy = plan.dot(dy);
    let residual = dx - &pdy.dot(&plan.t());
    let sym = &residual + &residual.t();
    Ok(-2.0 * sym.dot(&pdy))
}

/// Frobenius distance-matching loss ||D_X - Pi D_Y Pi^T||_F^2.
pub fn gw_frobenius_loss(dx: &Array2<f64>, dy: &Array2<f64>, plan: &Array2<f64>) -> f64 {
    let m = plan.dot(dy).dot(&plan.t());
    dx.iter()
        .zip(m.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Row-wise rank-matching loss ||R_delta(D_X) - R_delta(Pi D_Y Pi^T)||_F^2.
pub fn rank_matching_loss(
    dx: &Array2<f64>,
    dy: &Array2<f64>,
    plan: &Array2<f64>,
    delta: f64,
) -> Result<f64> {
    let m = plan.dot(dy).dot(&plan.t());
    let (rx, _) = soft_rank_rows(dx, delta, RankDirection::Ascending)?;
    let (rm, _) = soft_rank_rows(&m, delta, RankDirection::Ascending)?;
    Ok(rx
        .iter()
        .zip(rm.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Gradient of the rank-matching loss with respect to Pi, chaining the
/// soft-rank Jacobian through the bilinear map Pi -> Pi D_Y Pi^T.
pub fn grad_rankloss_wrt_plan(
    dx: &Array2<f64>,
    dy: &Array2<f64>,
    plan: &Array2<f64>,
    delta: f64,
) -> Result<Array2<f64>> {
    if !(delta > 0.0) {
        return Err(GwError::invalid(format!(
            "grad_rankloss_wrt_plan requires delta > 0, got {delta}"
        )));
    }
    check_square_symmetric(dx, "D_X")?;
    check_square_symmetric(dy, "D_Y")?;
    let n = dx.nrows();
    if plan.dim() != (n, dy.nrows()) {
        return Err(GwError::shape(
            format!("{} x {}", n, dy.nrows()),
            format!("{:?}", plan.dim()),
            "grad_rankloss_wrt_plan",
        ));
    }
    let pdy = plan.dot(dy);
    let m = pdy.dot(&plan.t());
    let (rx, _) = soft_rank_rows(dx, delta, RankDirection::Ascending)?;
    let (rm, results_m) = soft_rank_rows(&m, delta, RankDirection::Ascending)?;

    // dL/dM row-wise: the soft-rank Jacobian is symmetric, so the JVP doubles
    // as the transposed-Jacobian product.
    let mut grad_m = Array2::<f64>::zeros(m.dim());
    for i in 0..n {
        let upstream: Vec<f64> = (0..m.ncols())
            .map(|j| 2.0 * (rm[[i, j]] - rx[[i, j]]))
            .collect();
        let row = soft_rank_jvp(&results_m[i], &upstream, delta)?;
        for (j, v) in row.into_iter().enumerate() {
            grad_m[[i, j]] = v;
        }
    }
    let sym = &grad_m + &grad_m.t();
    Ok(sym.dot(&pdy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sinkhorn::sinkhorn_solve;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn uniform(n: usize) -> Array1<f64> {
        Array1::from_elem(n, 1.0 / n as f64)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize, lo: f64, hi: f64) -> Array2<f64> {
        Array2::from_shape_fn((n, m), |_| rng.random_range(lo..hi))
    }

    fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
        let a = random_matrix(rng, n, n, 0.0, 1.0);
        let mut s = &a + &a.t();
        for i in 0..n {
            s[[i, i]] = 0.0;
        }
        s
    }

    #[test]
    fn sq_euclidean_diagonal_zero_for_equal_embeddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = random_matrix(&mut rng, 5, 3, -1.0, 1.0);
        let c = cost_from_embeddings(&z, &z, GroundCost::SqEuclidean).unwrap();
        for i in 0..5 {
            assert_eq!(c[[i, i]], 0.0);
        }
        assert!(c.iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn neg_inner_on_orthonormal_rows() {
        let z = array![[1.0, 0.0], [0.0, 1.0]];
        let c = cost_from_embeddings(&z, &z, GroundCost::NegInner).unwrap();
        assert_eq!(c, array![[-1.0, 0.0], [0.0, -1.0]]);
    }

    #[test]
    fn cost_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for ground in [GroundCost::SqEuclidean, GroundCost::NegInner] {
            let zx = random_matrix(&mut rng, 6, 3, -1.0, 1.0);
            let zy = random_matrix(&mut rng, 6, 3, -1.0, 1.0);
            let w = random_matrix(&mut rng, 6, 6, -1.0, 1.0);
            let loss = |zx: &Array2<f64>, zy: &Array2<f64>| -> f64 {
                let c = cost_from_embeddings(zx, zy, ground).unwrap();
                c.iter().zip(w.iter()).map(|(a, b)| a * b).sum()
            };
            let (gx, gy) = cost_backward(&zx, &zy, ground, &w).unwrap();
            let h = 1e-6;
            for (i, j) in [(0, 0), (2, 1), (5, 2)] {
                let mut zp = zx.clone();
                let mut zm = zx.clone();
                zp[[i, j]] += h;
                zm[[i, j]] -= h;
                let fd = (loss(&zp, &zy) - loss(&zm, &zy)) / (2.0 * h);
                let an = gx[[i, j]];
                assert!(
                    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8) <= 1e-6,
                    "{ground:?} zx fd={fd} an={an}"
                );
                let mut zp = zy.clone();
                let mut zm = zy.clone();
                zp[[i, j]] += h;
                zm[[i, j]] -= h;
                let fd = (loss(&zx, &zp) - loss(&zx, &zm)) / (2.0 * h);
                let an = gy[[i, j]];
                assert!(
                    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8) <= 1e-6,
                    "{ground:?} zy fd={fd} an={an}"
                );
            }
        }
    }

    #[test]
    fn unrolled_converges_to_solver_plan() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cost = random_matrix(&mut rng, 7, 7, 0.0, 1.0);
        let mu = uniform(7);
        let nu = uniform(7);
        let (c, _) = sinkhorn_forward_unrolled(&cost, &mu, &nu, 0.2, 500).unwrap();
        let reference = sinkhorn_solve(&cost, &mu, &nu, 0.2, 2000, 1e-12).unwrap();
        assert!(c.marginal_error() <= 1e-6);
        for (a, b) in c.plan.iter().zip(reference.coupling.plan.iter()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn single_iteration_zero_cost_gives_uniform_plan() {
        let cost = Array2::zeros((3, 3));
        let (c, tape) = sinkhorn_forward_unrolled(&cost, &uniform(3), &uniform(3), 1.0, 1).unwrap();
        for v in c.plan.iter() {
            assert!((v - 1.0 / 9.0).abs() <= 1e-12);
        }
        assert_eq!(tape.iterations(), 1);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cost = random_matrix(&mut rng, 4, 5, 0.0, 1.0);
        let (c1, t1) = sinkhorn_forward_unrolled(&cost, &uniform(4), &uniform(5), 0.5, 20).unwrap();
        let (c2, t2) = sinkhorn_forward_unrolled(&cost, &uniform(4), &uniform(5), 0.5, 20).unwrap();
        assert_eq!(c1.plan, c2.plan);
        for (a, b) in t1.f_hist.iter().zip(t2.f_hist.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn backward_zero_grad_plan_gives_zero() {
        let cost = array![[0.1, 0.4], [0.3, 0.2]];
        let (_, tape) = sinkhorn_forward_unrolled(&cost, &uniform(2), &uniform(2), 0.5, 10).unwrap();
        let g = sinkhorn_backward_unrolled(&tape, &Array2::zeros((2, 2))).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 4;
        let cost = random_matrix(&mut rng, n, n, 0.0, 1.0);
        let mu = uniform(n);
        let nu = uniform(n);
        let w = random_matrix(&mut rng, n, n, -1.0, 1.0);
        let iters = 50;
        let eps = 0.5;
        let loss = |c: &Array2<f64>| -> f64 {
            let (cp, _) = sinkhorn_forward_unrolled(c, &mu, &nu, eps, iters).unwrap();
            cp.plan.iter().zip(w.iter()).map(|(a, b)| a * b).sum()
        };
        let (_, tape) = sinkhorn_forward_unrolled(&cost, &mu, &nu, eps, iters).unwrap();
        let grad = sinkhorn_backward_unrolled(&tape, &w).unwrap();
        let h = 1e-6;
        for i in 0..n {
            for j in 0..n {
                let mut cp = cost.clone();
                let mut cm = cost.clone();
                cp[[i, j]] += h;
                cm[[i, j]] -= h;
                let fd = (loss(&cp) - loss(&cm)) / (2.0 * h);
                let an = grad[[i, j]];
                let denom = fd.abs().max(an.abs()).max(1e-7);
                assert!((fd - an).abs() / denom <= 1e-4, "({i},{j}) fd={fd} an={an}");
            }
        }
    }

    #[test]
    fn converged_map_is_shift_invariant() {
        // Adding a constant to the cost leaves the plan unchanged, so the
        // directional derivative along the all-ones direction vanishes.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cost = random_matrix(&mut rng, 5, 5, 0.0, 1.0);
        let mu = uniform(5);
        let nu = uniform(5);
        let w = random_matrix(&mut rng, 5, 5, -1.0, 1.0);
        let (_, tape) = sinkhorn_forward_unrolled(&cost, &mu, &nu, 0.5, 400).unwrap();
        let grad = sinkhorn_backward_unrolled(&tape, &w).unwrap();
        let directional: f64 = grad.iter().sum();
        assert!(directional.abs() <= 1e-6, "directional={directional}");
    }

    #[test]
    fn grad_gw_zero_at_exact_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dy = random_symmetric(&mut rng, 4);
        let plan = Array2::eye(4) / 4.0;
        let dx = plan.dot(&dy).dot(&plan.t());
        let g = grad_gw_wrt_plan(&dx, &dy, &plan).unwrap();
        assert!(g.iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn grad_gw_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let dx = random_symmetric(&mut rng, 4);
        let dy = random_symmetric(&mut rng, 4);
        let plan = random_matrix(&mut rng, 4, 4, 0.0, 0.5);
        let g = grad_gw_wrt_plan(&dx, &dy, &plan).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            for j in 0..4 {
                let mut pp = plan.clone();
                let mut pm = plan.clone();
                pp[[i, j]] += h;
                pm[[i, j]] -= h;
                let fd = (gw_frobenius_loss(&dx, &dy, &pp) - gw_frobenius_loss(&dx, &dy, &pm))
                    / (2.0 * h);
                let an = g[[i, j]];
                assert!(
                    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-7) <= 1e-5,
                    "({i},{j}) fd={fd} an={an}"
                );
            }
        }
    }

    #[test]
    fn grad_gw_scales_quartically_minus_quadratic() {
        // Scaling D_X and D_Y by 2 scales the gradient by 4.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let dx = random_symmetric(&mut rng, 4);
        let dy = random_symmetric(&mut rng, 4);
        let plan = random_matrix(&mut rng, 4, 4, 0.0, 0.5);
        let g1 = grad_gw_wrt_plan(&dx, &dy, &plan).unwrap();
        let g2 = grad_gw_wrt_plan(&(&dx * 2.0), &(&dy * 2.0), &plan).unwrap();
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert!((4.0 * a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn grad_gw_rejects_asymmetric_input() {
        let dx = array![[0.0, 1.0], [2.0, 0.0]];
        let dy = array![[0.0, 1.0], [1.0, 0.0]];
        let plan = Array2::from_elem((2, 2), 0.25);
        assert!(grad_gw_wrt_plan(&dx, &dy, &plan).is_err());
    }

    #[test]
    fn rank_grad_zero_at_exact_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let dy = random_symmetric(&mut rng, 4);
        let plan = Array2::eye(4) / 4.0;
        let dx = plan.dot(&dy).dot(&plan.t());
        let g = grad_rankloss_wrt_plan(&dx, &dy, &plan, 0.5).unwrap();
        assert!(g.iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn rank_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let dx = random_symmetric(&mut rng, 4);
        let dy = random_symmetric(&mut rng, 4);
        let plan = random_matrix(&mut rng, 4, 4, 0.1, 0.5);
        let delta = 0.7;
        let g = grad_rankloss_wrt_plan(&dx, &dy, &plan, delta).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            for j in 0..4 {
                let mut pp = plan.clone();
                let mut pm = plan.clone();
                pp[[i, j]] += h;
                pm[[i, j]] -= h;
                let fd = (rank_matching_loss(&dx, &dy, &pp, delta).unwrap()
                    - rank_matching_loss(&dx, &dy, &pm, delta).unwrap())
                    / (2.0 * h);
                let an = g[[i, j]];
                let denom = fd.abs().max(an.abs()).max(1e-6);
                assert!((fd - an).abs() / denom <= 1e-4, "({i},{j}) fd={fd} an={an}");
            }
        }
    }

    #[test]
    fn rank_loss_invariant_under_positive_scaling_at_small_delta() {
        // A permutation matrix keeps the row gaps of Pi D_Y Pi^T well above
        // delta, so both runs sit in the hard-rank regime.
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let dx = random_symmetric(&mut rng, 5);
        let dy = random_symmetric(&mut rng, 5);
        let plan = crate::egw::Permutation::new(vec![2, 0, 4, 1, 3])
            .unwrap()
            .to_coupling()
            .plan
            * 5.0;
        let delta = 1e-3;
        let base = rank_matching_loss(&dx, &dy, &plan, delta).unwrap();
        let scaled = rank_matching_loss(&dx, &(&dy * 3.0), &plan, delta).unwrap();
        assert!((base - scaled).abs() <= 1e-6, "base={base} scaled={scaled}");
    }

    #[test]
    fn rank_grad_rejects_bad_delta() {
        let dx = Array2::zeros((2, 2));
        let plan = Array2::from_elem((2, 2), 0.25);
        assert!(grad_rankloss_wrt_plan(&dx, &dx, &plan, 0.0).is_err());
    }
}
