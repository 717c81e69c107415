//! Amortized GW training: learn embedding networks f and g so that the
//! entropic OT plan on their outputs minimizes the distance- (or rank-)
//! matching objective between the input metric structures. Training is
//! full-batch and deterministic given the seed.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::annealing::{AnnealSchedule, ScheduleKind};
use crate::diffot::{
    cost_backward, cost_from_embeddings, grad_gw_wrt_plan, grad_rankloss_wrt_plan,
    gw_frobenius_loss, rank_matching_loss, sinkhorn_backward_unrolled, sinkhorn_forward_unrolled,
    GroundCost,
};
use crate::error::{GwError, Result};
use crate::geometry::{
    knn_graph, pairwise_distances, Dataset, DistanceMatrix, EdgeLength, KnnWeighting, MetricKind,
};
use crate::net::{backward, forward, init_params, opt_step, Activation, MlpParams, MlpSpec, OptState};
use crate::sinkhorn::{sinkhorn_solve, Coupling};
use crate::spectral::{dirichlet_energy, dirichlet_energy_grad, laplacian, Laplacian};

/// Which outer objective the trainer minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// || D_X - Pi D_Y Pi^T ||_F^2
    Distance,
    /// || R_delta(D_X) - R_delta(Pi D_Y Pi^T) ||_F^2, row-wise soft ranks.
    Rank,
}

impl std::str::FromStr for LossKind {
    type Err = GwError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distance" => Ok(LossKind::Distance),
            "rank" => Ok(LossKind::Rank),
            other => Err(GwError::invalid(format!("unknown loss kind '{other}'"))),
        }
    }
}

/// Pre-loss normalization of the distance matrices and the learned cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    /// Rescale to unit median (off-diagonal median for distance matrices),
    /// which makes the epsilon, delta and lambda scales transferable.
    UnitMedian,
}

impl std::str::FromStr for Normalization {
    type Err = GwError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Normalization::None),
            "unit_median" => Ok(Normalization::UnitMedian),
            other => Err(GwError::invalid(format!("unknown normalization '{other}'"))),
        }
    }
}

fn default_schema_version() -> u32 {
    1
}

fn default_delta() -> f64 {
    1.0
}

fn default_unroll() -> usize {
    100
}

fn default_true() -> bool {
    true
}

fn default_lr() -> f64 {
    1e-3
}

fn default_smooth_k() -> usize {
    10
}

fn default_metric() -> MetricKind {
    MetricKind::Euclidean
}

fn default_normalization() -> Normalization {
    Normalization::UnitMedian
}

fn default_ground() -> GroundCost {
    GroundCost::SqEuclidean
}

fn default_loss() -> LossKind {
    LossKind::Distance
}

/// Full training configuration; mirrors the CLI `train` JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    #[serde(default = "default_loss")]
    pub loss_kind: LossKind,
    #[serde(default = "default_ground")]
    pub ground_cost: GroundCost,
    /// Soft-rank softness; used only when loss_kind is `rank`.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Weight of the Dirichlet smoothness energy of the learned cost.
    #[serde(default)]
    pub lambda_smooth: f64,
    /// Epsilon schedule; defaults to geometric 1.0 -> 0.01 over the first
    /// 70% of the steps.
    #[serde(default)]
    pub schedule: Option<AnnealSchedule>,
    pub steps: usize,
    /// Sinkhorn unroll depth per training step.
    #[serde(default = "default_unroll")]
    pub unroll_iters: usize,
    /// Triple the unroll depth once epsilon drops below 0.05 (conditioning
    /// guard for the annealed tail).
    #[serde(default = "default_true")]
    pub unroll_growth: bool,
    #[serde(default)]
    pub seed: u64,
    /// Embedding network for X; defaults to 3 layers, hidden width 256,
    /// relu, output dim max(2, min(d_x, d_y)).
    #[serde(default)]
    pub mlp_f: Option<MlpSpec>,
    #[serde(default)]
    pub mlp_g: Option<MlpSpec>,
    /// Metric for D_X and D_Y when they are computed from features.
    #[serde(default = "default_metric")]
    pub metric_kind: MetricKind,
    /// Neighbors for the geodesic metric and the smoothness graphs.
    #[serde(default = "default_smooth_k")]
    pub graph_k: usize,
    #[serde(default = "default_normalization")]
    pub normalization: Normalization,
    /// Evaluate the residual with N*Pi so a permutation-supported plan is
    /// commensurate with D_X.
    #[serde(default = "default_true")]
    pub plan_rescale: bool,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
}

impl TrainConfig {
    pub fn new(steps: usize) -> Self {
        TrainConfig {
            schema_version: 1,
            loss_kind: default_loss(),
            ground_cost: default_ground(),
            delta: default_delta(),
            lambda_smooth: 0.0,
            schedule: None,
            steps,
            unroll_iters: default_unroll(),
            unroll_growth: true,
            seed: 0,
            mlp_f: None,
            mlp_g: None,
            metric_kind: default_metric(),
            graph_k: default_smooth_k(),
            normalization: default_normalization(),
            plan_rescale: true,
            learning_rate: default_lr(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != 1 {
            return Err(GwError::invalid(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        if self.steps < 1 {
            return Err(GwError::invalid("steps must be >= 1"));
        }
        if self.unroll_iters < 1 {
            return Err(GwError::invalid("unroll_iters must be >= 1"));
        }
        if matches!(self.loss_kind, LossKind::Rank) && !(self.delta > 0.0) {
            return Err(GwError::invalid("rank loss requires delta > 0"));
        }
        if self.lambda_smooth < 0.0 {
            return Err(GwError::invalid("lambda_smooth must be nonnegative"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(GwError::invalid("learning_rate must be positive"));
        }
        if let Some(s) = &self.schedule {
            s.validate()?;
        }
        Ok(())
    }

    /// The effective schedule: the configured one, or the default geometric
    /// decay over the first 70% of steps.
    pub fn effective_schedule(&self) -> Result<AnnealSchedule> {
        match self.schedule {
            Some(s) => Ok(s),
            None => {
                let decay = ((self.steps as f64) * 0.7).ceil().max(1.0) as usize;
                AnnealSchedule::new(ScheduleKind::Geometric, 1.0, 0.01, decay, None)
            }
        }
    }

    fn unroll_at(&self, epsilon: f64) -> usize {
        if self.unroll_growth && epsilon < 0.05 {
            self.unroll_iters * 3
        } else {
            self.unroll_iters
        }
    }
}

/// Per-step training diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epsilon: f64,
    /// Primary (distance or rank) loss.
    pub loss: f64,
    /// Primary loss divided by N*M, comparable across sizes.
    pub normalized_loss: f64,
    pub smooth_energy: f64,
    pub grad_norm_f: f64,
    pub grad_norm_g: f64,
}

/// Training report: one record per step plus summary fields. Wall time is
/// metadata and excluded from determinism comparisons.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<StepRecord>,
    pub final_loss: f64,
    pub final_normalized_loss: f64,
    pub wall_time_seconds: f64,
    pub n_x: usize,
    pub n_y: usize,
}

/// Trained networks plus diagnostics. `final_plan` is the converged plan of
/// the trained cost at the schedule's terminal epsilon.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params_f: MlpParams,
    pub params_g: MlpParams,
    pub report: TrainReport,
    pub final_plan: Coupling,
}

/// Training failure modes. Non-finite aborts carry the last-good parameters
/// so callers can checkpoint them.
#[derive(Debug)]
pub enum TrainFailure {
    Invalid(GwError),
    NonFinite {
        step: usize,
        what: String,
        last_good: Box<(MlpParams, MlpParams, Vec<StepRecord>)>,
    },
}

impl std::fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainFailure::Invalid(e) => write!(f, "{e}"),
            TrainFailure::NonFinite { step, what, .. } => {
                write!(f, "numerical failure: training aborted at step {step}: {what}")
            }
        }
    }
}

impl std::error::Error for TrainFailure {}

impl From<GwError> for TrainFailure {
    fn from(e: GwError) -> Self {
        TrainFailure::Invalid(e)
    }
}

impl TrainFailure {
    pub fn is_numerical(&self) -> bool {
        matches!(self, TrainFailure::NonFinite { .. })
    }
}

fn normalize_distance(d: &DistanceMatrix, norm: Normalization) -> Result<DistanceMatrix> {
    match norm {
        Normalization::None => Ok(d.clone()),
        Normalization::UnitMedian => d.normalized_unit_median(),
    }
}

/// Per-step scale of the learned cost: the mean absolute entry. The mean is
/// smooth, so the normalization differentiates exactly; the loss becomes
/// genuinely invariant to the radial scale of the embeddings, which would
/// otherwise drift unboundedly.
fn cost_scale(c: &Array2<f64>, norm: Normalization) -> f64 {
    match norm {
        Normalization::None => 1.0,
        Normalization::UnitMedian => {
            let mean = c.iter().map(|v| v.abs()).sum::<f64>() / c.len() as f64;
            if mean > 1e-12 {
                mean
            } else {
                1.0
            }
        }
    }
}

/// Exact gradient of loss(C_raw / s(C_raw)) with s = mean(|C_raw|), given the
/// gradient on the normalized cost.
fn cost_scale_backward(
    grad_norm: &Array2<f64>,
    c_raw: &Array2<f64>,
    scale: f64,
    norm: Normalization,
) -> Array2<f64> {
    if matches!(norm, Normalization::None) || scale == 1.0 {
        return grad_norm / scale;
    }
    let len = c_raw.len() as f64;
    // <G, C_norm> = <G, C_raw>/s.
    let inner: f64 = grad_norm
        .iter()
        .zip(c_raw.iter())
        .map(|(g, c)| g * c)
        .sum::<f64>()
        / scale;
    let mut out = grad_norm.clone();
    out.zip_mut_with(c_raw, |g, &c| {
        let sign = if c < 0.0 { -1.0 } else { 1.0 };
        *g = (*g - inner * sign / len) / scale;
    });
    out
}

fn compute_distance(data: &Dataset, metric: MetricKind, graph_k: usize) -> Result<DistanceMatrix> {
    match metric {
        MetricKind::Precomputed => Err(GwError::invalid(
            "metric_kind 'precomputed' requires train_with_distances",
        )),
        MetricKind::Geodesic => {
            let k = graph_k.min(data.len().saturating_sub(1)).max(1);
            let graph = knn_graph(data, k, KnnWeighting::Gaussian, None)?;
            geodesic_from_graph(&graph)
        }
        other => pairwise_distances(data, other),
    }
}

fn geodesic_from_graph(graph: &crate::geometry::WeightedGraph) -> Result<DistanceMatrix> {
    crate::geometry::geodesic_distances(graph, EdgeLength::InverseWeight)
}

/// Fold per-feature standardization of the training inputs into the first
/// layer: the network then sees (x - mean)/std under the spec'd init,
/// regardless of the raw feature scales. Checkpoints carry the folded
/// weights, so inference needs no separate statistics.
fn fold_input_standardization(params: &mut MlpParams, points: &Array2<f64>) {
    let n = points.nrows() as f64;
    let d = points.ncols();
    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for j in 0..d {
        let col = points.column(j);
        let m: f64 = col.sum() / n;
        let var: f64 = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        mean[j] = m;
        sd[j] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    }
    let layer = &mut params.layers[0];
    for mut row in layer.weight.rows_mut() {
        for (j, w) in row.iter_mut().enumerate() {
            *w /= sd[j];
        }
    }
    for (o, b) in layer.bias.iter_mut().enumerate() {
        let mut shift = 0.0;
        for j in 0..d {
            shift += layer.weight[[o, j]] * mean[j];
        }
        *b -= shift;
    }
}

fn default_mlp_pair(x: &Dataset, y: &Dataset, seed: u64) -> Result<(MlpSpec, MlpSpec)> {
    let out = x.dim().min(y.dim()).max(2);
    let f = MlpSpec::new(vec![x.dim(), 256, 256, out], Activation::Relu, seed ^ 0x5f37)?;
    let g = MlpSpec::new(vec![y.dim(), 256, 256, out], Activation::Relu, seed ^ 0xa341)?;
    Ok((f, g))
}

/// Train the embedding pair on two datasets, computing D_X and D_Y under the
/// configured metric.
pub fn train(x: &Dataset, y: &Dataset, config: &TrainConfig) -> std::result::Result<TrainOutput, TrainFailure> {
    config.validate()?;
    let dx = compute_distance(x, config.metric_kind, config.graph_k)?;
    let dy = compute_distance(y, config.metric_kind, config.graph_k)?;
    train_with_distances(x, y, &dx, &dy, config)
}

/// Train with caller-supplied distance matrices (metric_kind `precomputed`).
pub fn train_with_distances(
    x: &Dataset,
    y: &Dataset,
    dx: &DistanceMatrix,
    dy: &DistanceMatrix,
    config: &TrainConfig,
) -> std::result::Result<TrainOutput, TrainFailure> {
    config.validate()?;
    let start = std::time::Instant::now();
    let n = x.len();
    let m = y.len();
    if dx.len() != n || dy.len() != m {
        return Err(GwError::shape(
            format!("distance matrices {n} x {n} and {m} x {m}"),
            format!("{} and {}", dx.len(), dy.len()),
            "train_with_distances",
        )
        .into());
    }
    if matches!(config.loss_kind, LossKind::Rank) && n != m {
        return Err(GwError::invalid("rank loss requires N == M").into());
    }
    if config.plan_rescale && n != m {
        return Err(GwError::invalid(
            "plan_rescale expects square instances; disable it for N != M",
        )
        .into());
    }

    let dxn = normalize_distance(dx, config.normalization)?;
    let dyn_ = normalize_distance(dy, config.normalization)?;

    let (spec_f, spec_g) = match (&config.mlp_f, &config.mlp_g) {
        (Some(f), Some(g)) => (f.clone(), g.clone()),
        (None, None) => default_mlp_pair(x, y, config.seed)?,
        _ => {
            return Err(GwError::invalid(
                "configure both mlp_f and mlp_g or neither",
            )
            .into())
        }
    };
    if spec_f.input_dim() != x.dim() || spec_g.input_dim() != y.dim() {
        return Err(GwError::shape(
            format!("network inputs {} and {}", x.dim(), y.dim()),
            format!("{} and {}", spec_f.input_dim(), spec_g.input_dim()),
            "train",
        )
        .into());
    }
    if spec_f.output_dim() != spec_g.output_dim() {
        return Err(GwError::invalid("mlp_f and mlp_g must share an output dimension").into());
    }

    // Smoothness graphs are inferred once on the raw features.
    let laplacians: Option<(Laplacian, Laplacian)> = if config.lambda_smooth > 0.0 {
        let kx = config.graph_k.min(n.saturating_sub(1)).max(1);
        let ky = config.graph_k.min(m.saturating_sub(1)).max(1);
        let gx = knn_graph(x, kx, KnnWeighting::Gaussian, None)?;
        let gy = knn_graph(y, ky, KnnWeighting::Gaussian, None)?;
        Some((laplacian(&gx)?, laplacian(&gy)?))
    } else {
        None
    };

    let schedule = config.effective_schedule()?;
    let mut params_f = init_params(&spec_f);
    let mut params_g = init_params(&spec_g);
    fold_input_standardization(&mut params_f, &x.points);
    fold_input_standardization(&mut params_g, &y.points);
    let mut opt_f = OptState::new(&params_f, config.learning_rate);
    let mut opt_g = OptState::new(&params_g, config.learning_rate);
    let mu = x.measure.clone();
    let nu = y.measure.clone();
    let scale_plan = if config.plan_rescale { n as f64 } else { 1.0 };

    let mut records: Vec<StepRecord> = Vec::with_capacity(config.steps);

    macro_rules! abort {
        ($step:expr, $what:expr, $records:expr) => {
            return Err(TrainFailure::NonFinite {
                step: $step,
                what: $what,
                last_good: Box::new((params_f.clone(), params_g.clone(), $records)),
            })
        };
    }

    for step in 0..config.steps {
        let epsilon = schedule.epsilon_at(step);
        let unroll = config.unroll_at(epsilon);

        let (zx, tape_f) = forward(&params_f, &x.points)?;
        let (zy, tape_g) = forward(&params_g, &y.points)?;
        let c_raw = cost_from_embeddings(&zx, &zy, config.ground_cost)?;
        let scale = cost_scale(&c_raw, config.normalization);
        let c = &c_raw / scale;

        let (coupling, tape) = match sinkhorn_forward_unrolled(&c, &mu, &nu, epsilon, unroll) {
            Ok(v) => v,
            Err(e) => abort!(step, format!("sinkhorn failed at eps={epsilon}: {e}"), records),
        };
        let q = &coupling.plan * scale_plan;

        let (loss, grad_plan) = match config.loss_kind {
            LossKind::Distance => {
                let loss = gw_frobenius_loss(&dxn.values, &dyn_.values, &q);
                let grad_q = grad_gw_wrt_plan(&dxn.values, &dyn_.values, &q)?;
                (loss, grad_q * scale_plan)
            }
            LossKind::Rank => {
                let loss = rank_matching_loss(&dxn.values, &dyn_.values, &q, config.delta)?;
                let grad_q = grad_rankloss_wrt_plan(&dxn.values, &dyn_.values, &q, config.delta)?;
                (loss, grad_q * scale_plan)
            }
        };
        let smooth_energy = match &laplacians {
            Some((lx, ly)) => dirichlet_energy(lx, ly, &c)?,
            None => 0.0,
        };
        let total = loss + config.lambda_smooth * smooth_energy;
        if !total.is_finite() {
            abort!(step, format!("loss is {total} (eps={epsilon})"), records);
        }

        let mut grad_c = sinkhorn_backward_unrolled(&tape, &grad_plan)?;
        if let Some((lx, ly)) = &laplacians {
            let gs = dirichlet_energy_grad(lx, ly, &c)?;
            grad_c.zip_mut_with(&gs, |a, &b| *a += config.lambda_smooth * b);
        }
        let grad_c_raw = cost_scale_backward(&grad_c, &c_raw, scale, config.normalization);
        let (gzx, gzy) = cost_backward(&zx, &zy, config.ground_cost, &grad_c_raw)?;
        let (grads_f, _) = backward(&params_f, &tape_f, &gzx)?;
        let (grads_g, _) = backward(&params_g, &tape_g, &gzy)?;

        let grad_norm_f = grads_f.norm();
        let grad_norm_g = grads_g.norm();
        if !grad_norm_f.is_finite() || !grad_norm_g.is_finite() {
            abort!(step, format!("non-finite gradient (eps={epsilon})"), records);
        }
        opt_step(&mut opt_f, &mut params_f, &grads_f).map_err(TrainFailure::Invalid)?;
        opt_step(&mut opt_g, &mut params_g, &grads_g).map_err(TrainFailure::Invalid)?;

        records.push(StepRecord {
            step,
            epsilon,
            loss,
            normalized_loss: loss / (n * m) as f64,
            smooth_energy,
            grad_norm_f,
            grad_norm_g,
        });
    }

    let final_eps = schedule.epsilon_at(config.steps);
    let final_plan = infer_with(
        &params_f,
        &params_g,
        x,
        y,
        final_eps,
        config.ground_cost,
        config.normalization,
    )?;
    let last = records.last().expect("steps >= 1");
    let report = TrainReport {
        final_loss: last.loss,
        final_normalized_loss: last.normalized_loss,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        n_x: n,
        n_y: m,
        records,
    };
    Ok(TrainOutput {
        params_f,
        params_g,
        report,
        final_plan,
    })
}

/// Inference: embed both datasets with the trained networks and solve one
/// entropic OT problem at `epsilon_infer`. Distance matrices are never
/// computed on the new samples.
pub fn infer(
    params_f: &MlpParams,
    params_g: &MlpParams,
    x_new: &Dataset,
    y_new: &Dataset,
    epsilon_infer: f64,
    ground_cost: GroundCost,
    normalization: Normalization,
) -> Result<Coupling> {
    infer_with(
        params_f,
        params_g,
        x_new,
        y_new,
        epsilon_infer,
        ground_cost,
        normalization,
    )
}

fn infer_with(
    params_f: &MlpParams,
    params_g: &MlpParams,
    x_new: &Dataset,
    y_new: &Dataset,
    epsilon: f64,
    ground_cost: GroundCost,
    normalization: Normalization,
) -> Result<Coupling> {
    if x_new.dim() != params_f.spec.input_dim() || y_new.dim() != params_g.spec.input_dim() {
        return Err(GwError::shape(
            format!(
                "feature widths {} and {}",
                params_f.spec.input_dim(),
                params_g.spec.input_dim()
            ),
            format!("{} and {}", x_new.dim(), y_new.dim()),
            "infer",
        ));
    }
    let (zx, _) = forward(params_f, &x_new.points)?;
    let (zy, _) = forward(params_g, &y_new.points)?;
    let c_raw = cost_from_embeddings(&zx, &zy, ground_cost)?;
    let scale = cost_scale(&c_raw, normalization);
    let c = &c_raw / scale;
    // Epsilon scaling: a few cheap solves at larger epsilon warm-start the
    // target solve. The fixed point at the target epsilon is unchanged; only
    // the iteration count drops.
    let mut warm: Option<ndarray::Array1<f64>> = None;
    for stage in [25.0 * epsilon, 5.0 * epsilon] {
        if stage <= epsilon || stage > 10.0 {
            continue;
        }
        let staged = crate::sinkhorn::sinkhorn_solve_warm(
            &c,
            &x_new.measure,
            &y_new.measure,
            stage,
            200,
            1e-4,
            warm.as_ref(),
        )?;
        warm = Some(staged.log_v * stage);
    }
    let solved = crate::sinkhorn::sinkhorn_solve_warm(
        &c,
        &x_new.measure,
        &y_new.measure,
        epsilon,
        2000,
        1e-6,
        warm.as_ref(),
    )?;
    Ok(solved.coupling)
}

/// Embeddings of a dataset under trained parameters.
pub fn embed(params: &MlpParams, data: &Dataset) -> Result<Array2<f64>> {
    Ok(forward(params, &data.points)?.0)
}

/// Transductive diagnostic variant: optimize a free N x M cost matrix by the
/// same unrolled gradient chain, with no networks. Unstable by construction;
/// results should be treated as a baseline, not a solver.
pub fn explicit_cost_solve(
    dx: &DistanceMatrix,
    dy: &DistanceMatrix,
    mu: &Array1<f64>,
    nu: &Array1<f64>,
    epsilon: f64,
    steps: usize,
) -> Result<(Coupling, Vec<f64>)> {
    log::warn!(
        "explicit_cost_solve optimizes the cost matrix directly; it is \
         transductive and can be unstable (prefer the trained solver)"
    );
    let n = dx.len();
    let m = dy.len();
    if mu.len() != n || nu.len() != m {
        return Err(GwError::shape(
            format!("marginals of length {n} and {m}"),
            format!("{} and {}", mu.len(), nu.len()),
            "explicit_cost_solve",
        ));
    }
    if steps < 1 {
        return Err(GwError::invalid("explicit_cost_solve needs steps >= 1"));
    }
    if !(epsilon > 0.0) {
        return Err(GwError::invalid("epsilon must be positive"));
    }
    let dxn = dx.normalized_unit_median()?;
    let dyn_ = dy.normalized_unit_median()?;
    let scale_plan = n as f64;
    let unroll = 80;
    let lr = 0.1;
    let (beta1, beta2, floor) = (0.9, 0.999, 1e-8);

    let mut cost = Array2::<f64>::zeros((n, m));
    let mut m1 = Array2::<f64>::zeros((n, m));
    let mut m2 = Array2::<f64>::zeros((n, m));
    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        let (coupling, tape) = sinkhorn_forward_unrolled(&cost, mu, nu, epsilon, unroll)?;
        let q = &coupling.plan * scale_plan;
        let loss = gw_frobenius_loss(&dxn.values, &dyn_.values, &q);
        if !loss.is_finite() {
            return Err(GwError::numerical(format!(
                "explicit_cost_solve diverged at step {step}; last losses {:?}",
                trace.iter().rev().take(5).collect::<Vec<_>>()
            )));
        }
        trace.push(loss);
        let grad_plan = grad_gw_wrt_plan(&dxn.values, &dyn_.values, &q)? * scale_plan;
        let grad_c = sinkhorn_backward_unrolled(&tape, &grad_plan)?;
        let t = (step + 1) as i32;
        let bc1 = 1.0 - beta1_pow(beta1, t);
        let bc2 = 1.0 - beta1_pow(beta2, t);
        ndarray::Zip::from(&mut cost)
            .and(&grad_c)
            .and(&mut m1)
            .and(&mut m2)
            .for_each(|c, &g, m1, m2| {
                *m1 = beta1 * *m1 + (1.0 - beta1) * g;
                *m2 = beta2 * *m2 + (1.0 - beta2) * g * g;
                *c -= lr * (*m1 / bc1) / ((*m2 / bc2).sqrt() + floor);
            });
    }
    let solved = sinkhorn_solve(&cost, mu, nu, epsilon, 2000, 1e-8)?;
    Ok((solved.coupling, trace))
}

fn beta1_pow(beta: f64, t: i32) -> f64 {
    beta.powi(t)
}
