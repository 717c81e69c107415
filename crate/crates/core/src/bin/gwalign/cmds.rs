use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Subcommand};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use gwalign::annealing::{AnnealSchedule, ScheduleKind};
use gwalign::diffot::GroundCost;
use gwalign::egw::{entropic_gw_solve, EgwConfig};
use gwalign::error::{GwError, Result};
use gwalign::eval::{barycentric_project, foscttm, label_transfer_accuracy};
use gwalign::geometry::{
    geodesic_distances, knn_graph, pairwise_distances, Dataset, DistanceMatrix, EdgeLength,
    KnnWeighting, MetricKind,
};
use gwalign::io;
use gwalign::net::Checkpoint;
use gwalign::sinkhorn::{ot_cost, sinkhorn_solve, Coupling};
use gwalign::synth::{gen_gaussian_mixture, gen_orthogonal_pair, gen_swiss_roll};
use gwalign::trainer::{infer, train, train_with_distances, Normalization, TrainConfig, TrainFailure};

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset CSV.
    Synth(SynthArgs),
    /// Compute a distance matrix from a dataset CSV.
    Dist(DistArgs),
    /// Solve one entropic OT problem for a cost matrix.
    SolveOt(SolveOtArgs),
    /// Run the classical entropic Gromov-Wasserstein solver.
    SolveEgw(SolveEgwArgs),
    /// Train the amortized solver from a JSON config.
    Train(TrainArgs),
    /// Align new samples with trained checkpoints (one OT solve).
    Infer(InferArgs),
    /// Score an alignment: FOSCTTM, label transfer, sorted curves.
    Eval(EvalArgs),
    /// Wall-time/memory sweep comparing amortized inference to entropic GW.
    Bench(BenchArgs),
    /// Internal single measurement for `bench` (spawned per method/size).
    #[command(hide = true)]
    BenchInner(BenchInnerArgs),
}

pub fn run(command: Command, seed: u64) -> Result<()> {
    match command {
        Command::Synth(args) => cmd_synth(args, seed),
        Command::Dist(args) => cmd_dist(args),
        Command::SolveOt(args) => cmd_solve_ot(args),
        Command::SolveEgw(args) => cmd_solve_egw(args),
        Command::Train(args) => cmd_train(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args, seed),
        Command::BenchInner(args) => cmd_bench_inner(args),
    }
}

/// Resolve an output path against GWALIGN_OUT_DIR when it is relative.
fn out_path(path: &Path) -> PathBuf {
    if path.is_relative() {
        if let Ok(base) = std::env::var("GWALIGN_OUT_DIR") {
            return PathBuf::from(base).join(path);
        }
    }
    path.to_path_buf()
}

#[derive(Args)]
pub struct SynthArgs {
    /// mixture | orthopair | swissroll
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 16)]
    d: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 10.0)]
    separation: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Input dataset (orthopair only).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_synth(args: SynthArgs, seed: u64) -> Result<()> {
    let data = match args.kind.as_str() {
        "mixture" => gen_gaussian_mixture(args.n, args.d, args.classes, args.separation, seed)?,
        "orthopair" => {
            let input = args
                .input
                .ok_or_else(|| GwError::invalid("--kind orthopair requires --input"))?;
            let x = io::read_dataset_csv(&input)?;
            gen_orthogonal_pair(&x, seed)?
        }
        "swissroll" => gen_swiss_roll(args.n, args.noise, seed)?,
        other => return Err(GwError::invalid(format!("unknown synth kind '{other}'"))),
    };
    io::write_dataset_csv(&out_path(&args.out), &data)?;
    Ok(())
}

#[derive(Args)]
pub struct DistArgs {
    #[arg(long)]
    input: PathBuf,
    /// euclidean | squared_euclidean | cosine | geodesic
    #[arg(long, default_value = "euclidean")]
    metric: String,
    #[arg(long, default_value_t = 10)]
    knn_k: usize,
    /// binary | gaussian (geodesic only)
    #[arg(long, default_value = "gaussian")]
    weighting: String,
    #[arg(long)]
    sigma: Option<f64>,
    /// unit | weight | inverse_weight (geodesic only)
    #[arg(long, default_value = "inverse_weight")]
    edge_length: String,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_dist(args: DistArgs) -> Result<()> {
    let data = io::read_dataset_csv(&args.input)?;
    let metric: MetricKind = args.metric.parse()?;
    let dm = match metric {
        MetricKind::Geodesic => {
            let weighting: KnnWeighting = args.weighting.parse()?;
            let edge_length: EdgeLength = args.edge_length.parse()?;
            let graph = knn_graph(&data, args.knn_k, weighting, args.sigma)?;
            geodesic_distances(&graph, edge_length)?
        }
        MetricKind::Precomputed => {
            return Err(GwError::invalid("'precomputed' is not a computable metric"))
        }
        other => pairwise_distances(&data, other)?,
    };
    io::write_matrix_csv(&out_path(&args.out), &dm.values)?;
    Ok(())
}

fn read_marginal(path: Option<&PathBuf>, n: usize, name: &str) -> Result<Array1<f64>> {
    match path {
        None => Ok(Array1::from_elem(n, 1.0 / n as f64)),
        Some(p) => {
            let m = io::read_matrix_csv(p)?;
            if m.ncols() != 1 || m.nrows() != n {
                return Err(GwError::invalid(format!(
                    "{name}: expected a single-column CSV with {n} rows"
                )));
            }
            Ok(m.column(0).to_owned())
        }
    }
}

#[derive(Args)]
pub struct SolveOtArgs {
    #[arg(long)]
    cost: PathBuf,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    mu: Option<PathBuf>,
    #[arg(long)]
    nu: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long)]
    out_plan: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Serialize)]
struct OtReport {
    schema_version: u32,
    epsilon: f64,
    iterations: usize,
    converged: bool,
    marginal_error: f64,
    transport_cost: f64,
}

fn cmd_solve_ot(args: SolveOtArgs) -> Result<()> {
    let cost = io::read_matrix_csv(&args.cost)?;
    let (n, m) = cost.dim();
    let mu = read_marginal(args.mu.as_ref(), n, "--mu")?;
    let nu = read_marginal(args.nu.as_ref(), m, "--nu")?;
    let result = sinkhorn_solve(&cost, &mu, &nu, args.epsilon, args.max_iters, args.tol)?;
    io::write_matrix_csv(&out_path(&args.out_plan), &result.coupling.plan)?;
    if let Some(report) = args.report {
        let doc = OtReport {
            schema_version: 1,
            epsilon: result.epsilon,
            iterations: result.iterations,
            converged: result.converged,
            marginal_error: result.marginal_error,
            transport_cost: ot_cost(&result.coupling, &cost)?,
        };
        io::write_json(&out_path(&report), &doc)?;
    }
    Ok(())
}

#[derive(Args)]
pub struct SolveEgwArgs {
    /// Precomputed distance matrix CSVs...
    #[arg(long)]
    dx: Option<PathBuf>,
    #[arg(long)]
    dy: Option<PathBuf>,
    /// ...or feature datasets plus a metric.
    #[arg(long)]
    x: Option<PathBuf>,
    #[arg(long)]
    y: Option<PathBuf>,
    #[arg(long, default_value = "euclidean")]
    metric: String,
    #[arg(long, default_value_t = 10)]
    knn_k: usize,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value_t = 200)]
    outer_iters: usize,
    #[arg(long, default_value_t = 1e-7)]
    outer_tol: f64,
    #[arg(long, default_value_t = 2000)]
    inner_max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    inner_tol: f64,
    /// Anneal epsilon geometrically from this value down to --epsilon.
    #[arg(long)]
    anneal_from: Option<f64>,
    #[arg(long)]
    anneal_steps: Option<usize>,
    /// Normalize distance matrices to unit median before solving.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    normalize: bool,
    #[arg(long)]
    out_plan: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Serialize)]
struct EgwReport {
    schema_version: u32,
    epsilon: f64,
    outer_iterations: usize,
    gw_loss: f64,
    loss_trace: Vec<f64>,
}

fn load_distance_pair(args: &SolveEgwArgs) -> Result<(DistanceMatrix, DistanceMatrix)> {
    match (&args.dx, &args.dy, &args.x, &args.y) {
        (Some(dx), Some(dy), _, _) => {
            let dx = DistanceMatrix::new(io::read_matrix_csv(dx)?, MetricKind::Precomputed)?;
            let dy = DistanceMatrix::new(io::read_matrix_csv(dy)?, MetricKind::Precomputed)?;
            Ok((dx, dy))
        }
        (None, None, Some(x), Some(y)) => {
            let metric: MetricKind = args.metric.parse()?;
            let x = io::read_dataset_csv(x)?;
            let y = io::read_dataset_csv(y)?;
            let compute = |data: &Dataset| -> Result<DistanceMatrix> {
                match metric {
                    MetricKind::Geodesic => {
                        let graph = knn_graph(data, args.knn_k, KnnWeighting::Gaussian, None)?;
                        geodesic_distances(&graph, EdgeLength::InverseWeight)
                    }
                    MetricKind::Precomputed => {
                        Err(GwError::invalid("use --dx/--dy for precomputed distances"))
                    }
                    other => pairwise_distances(data, other),
                }
            };
            Ok((compute(&x)?, compute(&y)?))
        }
        _ => Err(GwError::invalid(
            "provide either --dx and --dy, or --x and --y",
        )),
    }
}

fn cmd_solve_egw(args: SolveEgwArgs) -> Result<()> {
    let (mut dx, mut dy) = load_distance_pair(&args)?;
    if args.normalize {
        dx = dx.normalized_unit_median()?;
        dy = dy.normalized_unit_median()?;
    }
    let n = dx.len();
    let m = dy.len();
    let mu = Array1::from_elem(n, 1.0 / n as f64);
    let nu = Array1::from_elem(m, 1.0 / m as f64);
    let anneal = match (args.anneal_from, args.anneal_steps) {
        (Some(from), steps) => Some(AnnealSchedule::new(
            ScheduleKind::Geometric,
            from,
            args.epsilon,
            steps.unwrap_or(args.outer_iters / 2).max(1),
            None,
        )?),
        (None, _) => None,
    };
    let config = EgwConfig {
        epsilon: args.epsilon,
        outer_iters: args.outer_iters,
        outer_tol: args.outer_tol,
        inner_max_iters: args.inner_max_iters,
        inner_tol: args.inner_tol,
        anneal,
    };
    let result = entropic_gw_solve(&dx, &dy, &mu, &nu, &config)?;
    io::write_matrix_csv(&out_path(&args.out_plan), &result.coupling.plan)?;
    if let Some(report) = args.report {
        let doc = EgwReport {
            schema_version: 1,
            epsilon: args.epsilon,
            outer_iterations: result.outer_iterations,
            gw_loss: result.gw_loss,
            loss_trace: result.loss_trace,
        };
        io::write_json(&out_path(&report), &doc)?;
    }
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    /// JSON config mirroring TrainConfig.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    /// Precomputed distance CSVs (metric_kind = precomputed).
    #[arg(long)]
    dx: Option<PathBuf>,
    #[arg(long)]
    dy: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let config: TrainConfig = io::read_json(&args.config)?;
    config.validate()?;
    let x = io::read_dataset_csv(&args.x)?;
    let y = io::read_dataset_csv(&args.y)?;
    let out_dir = out_path(&args.out_dir);
    std::fs::create_dir_all(&out_dir)?;

    let result = match (&args.dx, &args.dy) {
        (Some(dx), Some(dy)) => {
            let dx = DistanceMatrix::new(io::read_matrix_csv(dx)?, MetricKind::Precomputed)?;
            let dy = DistanceMatrix::new(io::read_matrix_csv(dy)?, MetricKind::Precomputed)?;
            train_with_distances(&x, &y, &dx, &dy, &config)
        }
        (None, None) => train(&x, &y, &config),
        _ => return Err(GwError::invalid("provide both --dx and --dy or neither")),
    };

    match result {
        Ok(out) => {
            write_checkpoint(&out_dir.join("checkpoint_f.json"), &out.params_f)?;
            write_checkpoint(&out_dir.join("checkpoint_g.json"), &out.params_g)?;
            io::write_json(&out_dir.join("report.json"), &out.report)?;
            io::write_matrix_csv(&out_dir.join("final_plan.csv"), &out.final_plan.plan)?;
            Ok(())
        }
        Err(TrainFailure::Invalid(e)) => Err(e),
        Err(TrainFailure::NonFinite {
            step,
            what,
            last_good,
        }) => {
            let (pf, pg, records) = *last_good;
            write_checkpoint(&out_dir.join("checkpoint_f.json"), &pf)?;
            write_checkpoint(&out_dir.join("checkpoint_g.json"), &pg)?;
            io::write_json(&out_dir.join("partial_records.json"), &records)?;
            Err(GwError::numerical(format!(
                "training aborted at step {step}: {what}; last-good checkpoints written to {}",
                out_dir.display()
            )))
        }
    }
}

fn write_checkpoint(path: &Path, params: &gwalign::net::MlpParams) -> Result<()> {
    let ck = Checkpoint {
        params: params.clone(),
        opt_state: None,
    };
    std::fs::write(path, ck.to_json()? + "\n")?;
    Ok(())
}

fn read_checkpoint(path: &Path) -> Result<gwalign::net::MlpParams> {
    let text = std::fs::read_to_string(path)?;
    Ok(Checkpoint::from_json(&text)?.params)
}

#[derive(Args)]
pub struct InferArgs {
    #[arg(long)]
    checkpoint_f: PathBuf,
    #[arg(long)]
    checkpoint_g: PathBuf,
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    #[arg(long, default_value = "sq_euclidean")]
    ground_cost: String,
    #[arg(long, default_value = "unit_median")]
    normalization: String,
    #[arg(long)]
    out_plan: PathBuf,
}

fn cmd_infer(args: InferArgs) -> Result<()> {
    let pf = read_checkpoint(&args.checkpoint_f)?;
    let pg = read_checkpoint(&args.checkpoint_g)?;
    let x = io::read_dataset_csv(&args.x)?;
    let y = io::read_dataset_csv(&args.y)?;
    let ground: GroundCost = args.ground_cost.parse()?;
    let normalization: Normalization = args.normalization.parse()?;
    let plan = infer(&pf, &pg, &x, &y, args.epsilon, ground, normalization)?;
    io::write_matrix_csv(&out_path(&args.out_plan), &plan.plan)?;
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    /// projected: FOSCTTM between barycentrically projected X and Y.
    /// embedded: FOSCTTM between the two embedding matrices (needs checkpoints).
    #[arg(long, default_value = "projected")]
    space: String,
    #[arg(long)]
    checkpoint_f: Option<PathBuf>,
    #[arg(long)]
    checkpoint_g: Option<PathBuf>,
    #[arg(long)]
    report: PathBuf,
    /// Sorted per-point FOSCTTM curve CSV (columns: sorted p, sorted q).
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct EvalReport {
    schema_version: u32,
    space: String,
    foscttm: f64,
    per_point_p: Vec<f64>,
    per_point_q: Vec<f64>,
    label_accuracy: Option<f64>,
    tied_rows: Option<usize>,
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let plan = io::read_matrix_csv(&args.plan)?;
    let x = io::read_dataset_csv(&args.x)?;
    let y = io::read_dataset_csv(&args.y)?;
    if plan.dim() != (x.len(), y.len()) {
        return Err(GwError::shape(
            format!("{} x {}", x.len(), y.len()),
            format!("{:?}", plan.dim()),
            "eval --plan",
        ));
    }
    let coupling = Coupling {
        mu: plan.sum_axis(ndarray::Axis(1)),
        nu: plan.sum_axis(ndarray::Axis(0)),
        plan,
    };
    let (u, v): (Array2<f64>, Array2<f64>) = match args.space.as_str() {
        "projected" => {
            let projected = barycentric_project(&coupling, &y.points)?;
            (projected, y.points.clone())
        }
        "embedded" => {
            let (cf, cg) = match (&args.checkpoint_f, &args.checkpoint_g) {
                (Some(f), Some(g)) => (f, g),
                _ => {
                    return Err(GwError::invalid(
                        "--space embedded requires --checkpoint-f and --checkpoint-g",
                    ))
                }
            };
            let pf = read_checkpoint(cf)?;
            let pg = read_checkpoint(cg)?;
            (
                gwalign::trainer::embed(&pf, &x)?,
                gwalign::trainer::embed(&pg, &y)?,
            )
        }
        other => return Err(GwError::invalid(format!("unknown --space '{other}'"))),
    };
    let score = foscttm(&u, &v, MetricKind::Euclidean)?;
    let label_stats = match (&x.labels, &y.labels) {
        (Some(lx), Some(ly)) => Some(label_transfer_accuracy(&coupling, lx, ly)?),
        _ => None,
    };
    let report = EvalReport {
        schema_version: 1,
        space: args.space.clone(),
        foscttm: score.score,
        per_point_p: score.per_point_p.clone(),
        per_point_q: score.per_point_q.clone(),
        label_accuracy: label_stats.as_ref().map(|l| l.accuracy),
        tied_rows: label_stats.as_ref().map(|l| l.tied_rows),
    };
    io::write_json(&out_path(&args.report), &report)?;
    if let Some(curve) = args.curve {
        let mut p = score.per_point_p.clone();
        let mut q = score.per_point_q.clone();
        p.sort_by(|a, b| a.total_cmp(b));
        q.sort_by(|a, b| a.total_cmp(b));
        let mut m = Array2::zeros((p.len(), 2));
        for i in 0..p.len() {
            m[[i, 0]] = p[i];
            m[[i, 1]] = q[i];
        }
        io::write_matrix_csv(&out_path(&curve), &m)?;
    }
    Ok(())
}

#[derive(Args)]
pub struct BenchArgs {
    /// Comma-separated inference sizes, e.g. 500,1000,5000.
    #[arg(long, value_delimiter = ',', default_value = "500,1000,2000")]
    sizes: Vec<usize>,
    /// Comma-separated methods: infer, egw.
    #[arg(long, value_delimiter = ',', default_value = "infer,egw")]
    methods: Vec<String>,
    #[arg(long, default_value_t = 200)]
    train_n: usize,
    #[arg(long, default_value_t = 300)]
    train_steps: usize,
    #[arg(long, default_value_t = 16)]
    d: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 10.0)]
    separation: f64,
    /// Outer-iteration budget for the entropic GW baseline.
    #[arg(long, default_value_t = 5)]
    egw_outer: usize,
    #[arg(long, default_value_t = 0.05)]
    egw_epsilon: f64,
    #[arg(long, default_value_t = 0.01)]
    infer_epsilon: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct BenchInnerArgs {
    #[arg(long)]
    method: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    separation: f64,
    #[arg(long)]
    egw_outer: usize,
    #[arg(long)]
    egw_epsilon: f64,
    #[arg(long)]
    infer_epsilon: f64,
    /// Directory with checkpoint_f.json / checkpoint_g.json (infer only).
    #[arg(long)]
    dir: PathBuf,
    #[arg(long)]
    base_seed: u64,
}

#[derive(Serialize, Deserialize)]
struct BenchMeasurement {
    method: String,
    n: usize,
    seconds: f64,
    peak_rss_bytes: u64,
}

fn bench_eval_pair(n: usize, d: usize, classes: usize, separation: f64, base_seed: u64) -> Result<(Dataset, Dataset)> {
    let x = gen_gaussian_mixture(n, d, classes, separation, base_seed + 2)?;
    let y = gen_orthogonal_pair(&x, base_seed + 7)?;
    Ok((x, y))
}

fn cmd_bench(args: BenchArgs, seed: u64) -> Result<()> {
    // Train once on a small sample; inference amortizes this cost.
    let train_x = gen_gaussian_mixture(args.train_n, args.d, args.classes, args.separation, seed + 1)?;
    let train_y = gen_orthogonal_pair(&train_x, seed + 7)?;
    let mut config = TrainConfig::new(args.train_steps);
    config.seed = seed;
    let trained = train(&train_x, &train_y, &config).map_err(|e| match e {
        TrainFailure::Invalid(e) => e,
        e => GwError::numerical(e.to_string()),
    })?;
    let dir = tempfile::Builder::new().prefix("gwalign-bench").tempdir()?;
    write_checkpoint(&dir.path().join("checkpoint_f.json"), &trained.params_f)?;
    write_checkpoint(&dir.path().join("checkpoint_g.json"), &trained.params_g)?;

    let exe = std::env::current_exe()?;
    let mut rows = Vec::new();
    for &n in &args.sizes {
        for method in &args.methods {
            let output = std::process::Command::new(&exe)
                .arg("bench-inner")
                .arg("--method")
                .arg(method)
                .arg("--n")
                .arg(n.to_string())
                .arg("--d")
                .arg(args.d.to_string())
                .arg("--classes")
                .arg(args.classes.to_string())
                .arg("--separation")
                .arg(args.separation.to_string())
                .arg("--egw-outer")
                .arg(args.egw_outer.to_string())
                .arg("--egw-epsilon")
                .arg(args.egw_epsilon.to_string())
                .arg("--infer-epsilon")
                .arg(args.infer_epsilon.to_string())
                .arg("--dir")
                .arg(dir.path())
                .arg("--base-seed")
                .arg(seed.to_string())
                .output()?;
            if !output.status.success() {
                return Err(GwError::numerical(format!(
                    "bench-inner {method} n={n} failed: {}",
                    String::from_utf8_lossy(&output.stderr)
                )));
            }
            let m: BenchMeasurement = serde_json::from_slice(&output.stdout)?;
            rows.push(m);
        }
    }

    let path = out_path(&args.out);
    let mut writer = csv::WriterBuilder::new().has_headers(true).from_path(&path)?;
    writer.write_record(["method", "n", "seconds", "bytes"])?;
    for r in &rows {
        writer.write_record([
            r.method.clone(),
            r.n.to_string(),
            format!("{}", r.seconds),
            r.peak_rss_bytes.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

fn peak_rss_bytes() -> u64 {
    if let Ok(status) = std::fs::read_to_string("/proc/self/status") {
        for line in status.lines() {
            if let Some(rest) = line.strip_prefix("VmHWM:") {
                let kb: u64 = rest
                    .trim()
                    .trim_end_matches("kB")
                    .trim()
                    .parse()
                    .unwrap_or(0);
                return kb * 1024;
            }
        }
    }
    0
}

fn cmd_bench_inner(args: BenchInnerArgs) -> Result<()> {
    let (x, y) = bench_eval_pair(args.n, args.d, args.classes, args.separation, args.base_seed)?;
    let seconds = match args.method.as_str() {
        "infer" => {
            let pf = read_checkpoint(&args.dir.join("checkpoint_f.json"))?;
            let pg = read_checkpoint(&args.dir.join("checkpoint_g.json"))?;
            let start = Instant::now();
            let plan = infer(
                &pf,
                &pg,
                &x,
                &y,
                args.infer_epsilon,
                GroundCost::SqEuclidean,
                Normalization::UnitMedian,
            )?;
            let dt = start.elapsed().as_secs_f64();
            std::hint::black_box(&plan);
            dt
        }
        "egw" => {
            // Distance computation is excluded from the timing on both sides.
            let dx = pairwise_distances(&x, MetricKind::Euclidean)?.normalized_unit_median()?;
            let dy = pairwise_distances(&y, MetricKind::Euclidean)?.normalized_unit_median()?;
            let mu = x.measure.clone();
            let nu = y.measure.clone();
            let config = EgwConfig {
                epsilon: args.egw_epsilon,
                outer_iters: args.egw_outer,
                outer_tol: 0.0,
                inner_max_iters: 2000,
                inner_tol: 1e-6,
                anneal: None,
            };
            let start = Instant::now();
            let result = entropic_gw_solve(&dx, &dy, &mu, &nu, &config)?;
            let dt = start.elapsed().as_secs_f64();
            std::hint::black_box(&result.coupling.plan);
            dt
        }
        other => return Err(GwError::invalid(format!("unknown bench method '{other}'"))),
    };
    let m = BenchMeasurement {
        method: args.method,
        n: args.n,
        seconds,
        peak_rss_bytes: peak_rss_bytes(),
    };
    println!("{}", serde_json::to_string(&m)?);
    Ok(())
}
