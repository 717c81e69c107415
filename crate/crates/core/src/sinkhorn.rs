//! Entropy-regularized linear optimal transport via log-domain stabilized
//! Sinkhorn iterations.
//!
//! This is the inner solver of every other module. The updates run entirely
//! on the dual potentials with log-sum-exp reductions; the kernel matrix
//! K = exp(-C/eps) is never materialized, so small eps (as driven by the
//! annealing schedule) does not underflow.

use ndarray::{Array1, Array2};

use crate::error::{GwError, Result};

/// A transport plan with its prescribed marginals.
#[derive(Debug, Clone)]
pub struct Coupling {
    /// N x M nonnegative plan.
    pub plan: Array2<f64>,
    pub mu: Array1<f64>,
    pub nu: Array1<f64>,
}

impl Coupling {
    /// Largest violation of the row/column marginal constraints.
    pub fn marginal_error(&self) -> f64 {
        let row_sums = self.plan.sum_axis(ndarray::Axis(1));
        let col_sums = self.plan.sum_axis(ndarray::Axis(0));
        let r = row_sums
            .iter()
            .zip(self.mu.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let c = col_sums
            .iter()
            .zip(self.nu.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        r.max(c)
    }
}

/// Output of `sinkhorn_solve`.
#[derive(Debug, Clone)]
pub struct SinkhornResult {
    pub coupling: Coupling,
    /// Log of the row scaling vector u; the dual potential is alpha = eps * log_u.
    pub log_u: Array1<f64>,
    /// Log of the column scaling vector v.
    pub log_v: Array1<f64>,
    pub iterations: usize,
    pub marginal_error: f64,
    pub epsilon: f64,
    pub converged: bool,
}

/// Log-sum-exp of a pre-filled scratch slice.
fn lse_slice(scratch: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &v in scratch {
        if v > max {
            max = v;
        }
    }
    if !max.is_finite() {
        return max;
    }
    let mut sum = 0.0;
    for &v in scratch {
        sum += (v - max).exp();
    }
    max + sum.ln()
}

/// One row-potential sweep: f_i = eps * (log_mu_i - LSE_j((g_j - C_ij)/eps)).
/// `cost` rows must be contiguous.
pub(crate) fn f_sweep(
    cost: &Array2<f64>,
    g: &[f64],
    log_mu: &[f64],
    epsilon: f64,
    f: &mut [f64],
    scratch: &mut Vec<f64>,
) {
    let m = g.len();
    scratch.resize(m, 0.0);
    let inv = 1.0 / epsilon;
    for (i, fi) in f.iter_mut().enumerate() {
        let row = cost.row(i);
        let row = row.as_slice().expect("standard layout");
        for j in 0..m {
            scratch[j] = (g[j] - row[j]) * inv;
        }
        *fi = epsilon * (log_mu[i] - lse_slice(scratch));
    }
}

/// One column-potential sweep using the transposed cost (rows contiguous).
pub(crate) fn g_sweep(
    cost_t: &Array2<f64>,
    f: &[f64],
    log_nu: &[f64],
    epsilon: f64,
    g: &mut [f64],
    scratch: &mut Vec<f64>,
) {
    let n = f.len();
    scratch.resize(n, 0.0);
    let inv = 1.0 / epsilon;
    for (j, gj) in g.iter_mut().enumerate() {
        let col = cost_t.row(j);
        let col = col.as_slice().expect("standard layout");
        for i in 0..n {
            scratch[i] = (f[i] - col[i]) * inv;
        }
        *gj = epsilon * (log_nu[j] - lse_slice(scratch));
    }
}

/// Max row-marginal violation of the plan implied by (f, g).
pub(crate) fn row_marginal_error(
    cost: &Array2<f64>,
    f: &[f64],
    g: &[f64],
    mu: &[f64],
    epsilon: f64,
) -> f64 {
    let m = g.len();
    let inv = 1.0 / epsilon;
    let mut err = 0.0f64;
    for (i, (&fi, &mi)) in f.iter().zip(mu.iter()).enumerate() {
        let row = cost.row(i);
        let row = row.as_slice().expect("standard layout");
        let mut sum = 0.0;
        for j in 0..m {
            sum += ((fi + g[j] - row[j]) * inv).exp();
        }
        err = err.max((sum - mi).abs());
    }
    err
}

pub(crate) fn owned_standard(cost: &Array2<f64>) -> Array2<f64> {
    if cost.is_standard_layout() {
        cost.clone()
    } else {
        Array2::from_shape_fn(cost.dim(), |idx| cost[idx])
    }
}

/// Validate a marginal vector; renormalizes with a warning if the total
/// drifts from 1 by more than 1e-9.
fn checked_marginal(w: &Array1<f64>, name: &str) -> Result<Array1<f64>> {
    if w.is_empty() {
        return Err(GwError::invalid(format!("{name} is empty")));
    }
    if w.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(GwError::invalid(format!(
            "{name} must be a nonnegative finite probability vector"
        )));
    }
    let total: f64 = w.sum();
    if total <= 0.0 {
        return Err(GwError::invalid(format!("{name} sums to zero")));
    }
    if (total - 1.0).abs() > 1e-9 {
        log::warn!("{name} sums to {total}; renormalizing to 1");
        Ok(w / total)
    } else {
        Ok(w.clone())
    }
}

/// Solve the eps-regularized OT problem
/// min <Pi, C> + eps <Pi, log Pi> over couplings with marginals (mu, nu).
///
/// Stops when the L-infinity marginal violation drops below `tol` or after
/// `max_iters` iterations; hitting the budget is not an error, the result
/// carries `converged: false` and the achieved error.
pub fn sinkhorn_solve(
    cost: &Array2<f64>,
    mu: &Array1<f64>,
    nu: &Array1<f64>,
    epsilon: f64,
    max_iters: usize,
    tol: f64,
) -> Result<SinkhornResult> {
    sinkhorn_solve_warm(cost, mu, nu, epsilon, max_iters, tol, None)
}

/// As `sinkhorn_solve`, optionally warm-started from a previous column
/// potential (same fixed point, fewer iterations).
pub fn sinkhorn_solve_warm(
    cost: &Array2<f64>,
    mu: &Array1<f64>,
    nu: &Array1<f64>,
    epsilon: f64,
    max_iters: usize,
    tol: f64,
    g_init: Option<&Array1<f64>>,
) -> Result<SinkhornResult> {
    let (n, m) = cost.dim();
    if !(epsilon > 0.0) {
        return Err(GwError::invalid(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if !cost.iter().all(|v| v.is_finite()) {
        return Err(GwError::invalid("cost matrix has non-finite entries"));
    }
    let mu = checked_marginal(mu, "mu")?;
    let nu = checked_marginal(nu, "nu")?;
    if mu.len() != n || nu.len() != m {
        return Err(GwError::shape(
            format!("marginals of length {n} and {m}"),
            format!("{} and {}", mu.len(), nu.len()),
            "sinkhorn_solve",
        ));
    }

    let log_mu = mu.mapv(f64::ln);
    let log_nu = nu.mapv(f64::ln);
    let cost_std = owned_standard(cost);
    let cost_t = owned_standard(&cost.t().to_owned());
    // Potentials f (length n) and g (length m); plan = exp((f_i + g_j - C_ij)/eps).
    let mut f = Array1::zeros(n);
    let mut g = match g_init {
        Some(g0) if g0.len() == m => g0.clone(),
        _ => Array1::zeros(m),
    };
    let mut scratch = Vec::new();

    // The convergence check costs a full plan reconstruction; amortize it
    // over a few iterations on larger instances.
    let check_every = if n * m > 16_384 { 5 } else { 1 };
    let mut iterations = 0;
    let mut marginal_error = f64::INFINITY;
    let mut converged = false;
    while iterations < max_iters {
        iterations += 1;
        f_sweep(
            &cost_std,
            g.as_slice().unwrap(),
            log_mu.as_slice().unwrap(),
            epsilon,
            f.as_slice_mut().unwrap(),
            &mut scratch,
        );
        g_sweep(
            &cost_t,
            f.as_slice().unwrap(),
            log_nu.as_slice().unwrap(),
            epsilon,
            g.as_slice_mut().unwrap(),
            &mut scratch,
        );
        if iterations % check_every != 0 && iterations != max_iters {
            continue;
        }
        // After the g-update the column sums are exact; the row violation is
        // the convergence measure.
        let err = row_marginal_error(
            &cost_std,
            f.as_slice().unwrap(),
            g.as_slice().unwrap(),
            mu.as_slice().unwrap(),
            epsilon,
        );
        marginal_error = err;
        if !err.is_finite() {
            return Err(GwError::numerical(format!(
                "sinkhorn marginal error became non-finite at iteration {iterations} (eps={epsilon})"
            )));
        }
        if err <= tol {
            converged = true;
            break;
        }
    }

    let plan = plan_from_potentials(&cost_std, &f, &g, epsilon);
    let coupling = Coupling {
        plan,
        mu: mu.clone(),
        nu: nu.clone(),
    };
    let marginal_error = coupling.marginal_error().min(marginal_error);
    Ok(SinkhornResult {
        coupling,
        log_u: f / epsilon,
        log_v: g / epsilon,
        iterations,
        marginal_error,
        epsilon,
        converged,
    })
}

pub(crate) fn plan_from_potentials(
    cost: &Array2<f64>,
    f: &Array1<f64>,
    g: &Array1<f64>,
    epsilon: f64,
) -> Array2<f64> {
    let (n, m) = cost.dim();
    let cost_std = owned_standard(cost);
    let gs = g.as_slice().expect("owned potentials");
    let inv = 1.0 / epsilon;
    let mut plan = Array2::zeros((n, m));
    for i in 0..n {
        let fi = f[i];
        let row = cost_std.row(i);
        let row = row.as_slice().unwrap();
        let out = plan.row_mut(i);
        let out = out.into_slice().unwrap();
        for j in 0..m {
            out[j] = ((fi + gs[j] - row[j]) * inv).exp();
        }
    }
    plan
}

/// Transport cost <Pi, C>.
pub fn ot_cost(coupling: &Coupling, cost: &Array2<f64>) -> Result<f64> {
    if coupling.plan.dim() != cost.dim() {
        return Err(GwError::shape(
            format!("{:?}", coupling.plan.dim()),
            format!("{:?}", cost.dim()),
            "ot_cost",
        ));
    }
    Ok(coupling
        .plan
        .iter()
        .zip(cost.iter())
        .map(|(p, c)| p * c)
        .sum())
}

/// Entropic objective <Pi, C> + eps <Pi, log Pi>, with 0 log 0 = 0.
pub fn entropic_objective(plan: &Array2<f64>, cost: &Array2<f64>, epsilon: f64) -> f64 {
    let transport: f64 = plan.iter().zip(cost.iter()).map(|(p, c)| p * c).sum();
    let entropy: f64 = plan
        .iter()
        .map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 })
        .sum();
    transport + epsilon * entropy
}
