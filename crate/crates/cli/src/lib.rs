//! Subcommands of the `acca` binary.
//!
//! Every command is a pure function of its flags and input files: all
//! randomness flows from `--seed`, and timing information is kept out of
//! `report.json` (it goes to `timing.json`) so reruns are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use acca::align::FeasibilityReport;
use acca::io::{atomic_write, read_matrix_csv, write_matrix_csv, write_pgm};
use acca::metrics::{permutation_targets, MonteCarloReport};
use acca::{
    baseline_accuracy, fit_acca, generate, initialize_alignment, monte_carlo, topk_accuracy, AccaError, DatasetPair,
    GenConfig, HyperParams, Matrix, Reconcile, StopReason, TopKReport,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub type Result<T> = std::result::Result<T, AccaError>;

#[derive(Debug, Parser)]
#[command(name = "acca", version, about = "Aligned canonical correlation analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic two-view instance with a planted permutation.
    Generate(GenerateArgs),
    /// Initialize the alignment and run the alternating solver.
    Fit(FitArgs),
    /// Monte Carlo sweep over entropy bounds.
    Sweep(SweepArgs),
    /// Score an estimated alignment against a ground-truth permutation.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenFlags {
    /// Number of samples (columns).
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    /// Latent dimension of the generator.
    #[arg(long, default_value_t = 2)]
    pub dbar: usize,
    #[arg(long, default_value_t = 15)]
    pub dx: usize,
    #[arg(long, default_value_t = 10)]
    pub dy: usize,
    /// Additive Gaussian noise level (0 = noiseless).
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
}

impl GenFlags {
    fn config(&self, seed: u64) -> GenConfig {
        GenConfig {
            n: self.n,
            dbar: self.dbar,
            dx: self.dx,
            dy: self.dy,
            seed,
            noise: self.noise,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReconcileArg {
    Raw,
    Principal,
    Canonical,
}

impl From<ReconcileArg> for Reconcile {
    fn from(r: ReconcileArg) -> Self {
        match r {
            ReconcileArg::Raw => Reconcile::Raw,
            ReconcileArg::Principal => Reconcile::Principal,
            ReconcileArg::Canonical => Reconcile::CanonicalFrame,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct HyperFlags {
    /// Dimension of the shared embedding.
    #[arg(long, default_value_t = 7)]
    pub d: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub gamma1: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub gamma2: f64,
    /// Outer iteration cap.
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub loss_threshold: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub loss_rel_tol: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub rank_rtol: f64,
    /// How the initializer reconciles views of different dimension.
    #[arg(long, value_enum, default_value_t = ReconcileArg::Canonical)]
    pub reconcile: ReconcileArg,
}

impl HyperFlags {
    fn hyper(&self, lambda: f64, seed: u64) -> HyperParams {
        let mut hp = HyperParams {
            d: self.d,
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            lambda,
            outer_max_iters: self.max_iters,
            loss_threshold: self.loss_threshold,
            loss_rel_tol: self.loss_rel_tol,
            rank_rtol: self.rank_rtol,
            seed,
            ..HyperParams::default()
        };
        hp.init.reconcile = self.reconcile.into();
        hp
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub gen: GenFlags,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// First view as a headerless CSV matrix (features x samples).
    #[arg(long, requires = "y", conflicts_with = "synthetic")]
    pub x: Option<PathBuf>,
    #[arg(long, requires = "x")]
    pub y: Option<PathBuf>,
    /// Optional ground-truth permutation for scoring file inputs.
    #[arg(long)]
    pub p_true: Option<PathBuf>,
    /// Generate the views instead of reading them.
    #[arg(long)]
    pub synthetic: bool,
    #[command(flatten)]
    pub gen: GenFlags,
    #[command(flatten)]
    pub hyper: HyperFlags,
    /// Entropy bound on each row of P (nats, at most ln N).
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4, 5])]
    pub k: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.5, 1.0, 2.0])]
    pub lambdas: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    pub replicates: usize,
    #[command(flatten)]
    pub gen: GenFlags,
    #[command(flatten)]
    pub hyper: HyperFlags,
    /// Base seed; replicate r uses seed + r.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4, 5])]
    pub k: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub p_est: PathBuf,
    #[arg(long)]
    pub p_true: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4, 5])]
    pub k: Vec<usize>,
    /// Directory for eval.csv; defaults to the directory of --p-est.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Process exit code for an error.
pub fn exit_code(err: &AccaError) -> i32 {
    match err {
        AccaError::Parameter(_) | AccaError::Contract(_) => 2,
        AccaError::Io { .. } | AccaError::Parse { .. } => 3,
        AccaError::Numerical { .. } => 4,
    }
}

pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Eval(a) => cmd_eval(&a),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| AccaError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

#[derive(Debug, Serialize)]
struct Manifest {
    config: GenConfig,
    x_shape: [usize; 2],
    y_shape: [usize; 2],
    p_true_shape: [usize; 2],
    /// Relation between the stored views and the ground truth.
    convention: &'static str,
    files: Vec<&'static str>,
}

const CONVENTION: &str = "Y * P_true equals the aligned second view; X and Y are row-centered";

pub fn cmd_generate(args: &GenerateArgs) -> Result<String> {
    let config = args.gen.config(args.seed);
    let inst = generate(&config)?;
    ensure_dir(&args.out)?;
    write_matrix_csv(&args.out.join("X.csv"), &inst.data.x)?;
    write_matrix_csv(&args.out.join("Y.csv"), &inst.data.y)?;
    write_matrix_csv(&args.out.join("P_true.csv"), &inst.p_true)?;
    let manifest = Manifest {
        config,
        x_shape: [inst.data.x.nrows(), inst.data.x.ncols()],
        y_shape: [inst.data.y.nrows(), inst.data.y.ncols()],
        p_true_shape: [config.n, config.n],
        convention: CONVENTION,
        files: vec!["X.csv", "Y.csv", "P_true.csv"],
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;
    Ok(format!(
        "wrote X ({}x{}), Y ({}x{}) and P_true to {}",
        manifest.x_shape[0],
        manifest.x_shape[1],
        manifest.y_shape[0],
        manifest.y_shape[1],
        args.out.display()
    ))
}

#[derive(Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum DataSource {
    Synthetic {
        config: GenConfig,
    },
    Files {
        x: String,
        y: String,
        p_true: Option<String>,
    },
}

#[derive(Debug, Serialize)]
struct FitSummary {
    iterations: usize,
    stop_reason: StopReason,
    first_loss: f64,
    final_loss: f64,
    mean_row_entropy: f64,
    feasibility: FeasibilityReport,
}

/// Payload of `report.json` for `fit`.
#[derive(Debug, Serialize)]
struct FitReport {
    data: DataSource,
    x_shape: [usize; 2],
    y_shape: [usize; 2],
    hyperparams: HyperParams,
    fit: FitSummary,
    initial_topk: Option<TopKReport>,
    topk: Option<TopKReport>,
    artifacts: Vec<&'static str>,
}

#[derive(Debug, Serialize)]
struct Timing {
    phases_ms: Vec<(String, f64)>,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn single_report(p: &Matrix, p_true: &Matrix, ks: &[usize]) -> Result<TopKReport> {
    let row = ks
        .iter()
        .map(|&k| topk_accuracy(p, p_true, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(TopKReport::from_rows(p.nrows(), ks, &[row]))
}

fn trace_csv(trace: &[f64]) -> String {
    let mut s = String::from("iteration,loss\n");
    for (i, v) in trace.iter().enumerate() {
        s.push_str(&format!("{},{v:?}\n", i + 1));
    }
    s
}

pub fn cmd_fit(args: &FitArgs) -> Result<String> {
    let start = Instant::now();
    let (data, p_true, source) = if args.synthetic {
        let config = args.gen.config(args.seed);
        let inst = generate(&config)?;
        (inst.data, Some(inst.p_true), DataSource::Synthetic { config })
    } else {
        let (Some(xp), Some(yp)) = (&args.x, &args.y) else {
            return Err(AccaError::Parameter("provide --x and --y, or --synthetic".into()));
        };
        let x = read_matrix_csv(xp)?;
        let y = read_matrix_csv(yp)?;
        if x.ncols() != y.ncols() {
            return Err(AccaError::Parameter(format!(
                "views disagree on the sample count: X is {}x{}, Y is {}x{}",
                x.nrows(),
                x.ncols(),
                y.nrows(),
                y.ncols()
            )));
        }
        let truth = args.p_true.as_deref().map(read_matrix_csv).transpose()?;
        let source = DataSource::Files {
            x: xp.display().to_string(),
            y: yp.display().to_string(),
            p_true: args.p_true.as_ref().map(|p| p.display().to_string()),
        };
        (DatasetPair::centered(x, y)?, truth, source)
    };
    let n = data.n();
    let hp = args.hyper.hyper(args.lambda, args.seed);
    hp.validate(n)?;
    if let Some(t) = &p_true {
        if t.nrows() != n {
            return Err(AccaError::Parameter(format!(
                "P_true is {}x{}, expected {n}x{n}",
                t.nrows(),
                t.ncols()
            )));
        }
        permutation_targets(t)?;
    }
    let load_ms = ms(start);

    let t_init = Instant::now();
    let init = initialize_alignment(&data, hp.gamma1, hp.gamma2, hp.lambda, hp.rank_rtol, &hp.init)?;
    let init_ms = ms(t_init);
    let t_fit = Instant::now();
    let fit = fit_acca(&data, &hp, &init)?;
    let fit_ms = ms(t_fit);

    let (initial_topk, topk) = match &p_true {
        Some(t) => (
            Some(single_report(init.matrix(), t, &args.k)?),
            Some(single_report(fit.alignment.matrix(), t, &args.k)?),
        ),
        None => (None, None),
    };

    ensure_dir(&args.out)?;
    let mut artifacts = vec!["report.json", "loss_trace.csv", "P_est.csv", "P_est.pgm", "timing.json"];
    atomic_write(&args.out.join("loss_trace.csv"), trace_csv(&fit.loss_trace).as_bytes())?;
    write_matrix_csv(&args.out.join("P_est.csv"), fit.alignment.matrix())?;
    write_pgm(&args.out.join("P_est.pgm"), fit.alignment.matrix())?;
    if let (Some(t), DataSource::Synthetic { .. }) = (&p_true, &source) {
        write_pgm(&args.out.join("P_true.pgm"), t)?;
        write_matrix_csv(&args.out.join("P_true.csv"), t)?;
        artifacts.extend(["P_true.csv", "P_true.pgm"]);
    }

    let report = FitReport {
        data: source,
        x_shape: [data.x.nrows(), n],
        y_shape: [data.y.nrows(), n],
        hyperparams: hp,
        fit: FitSummary {
            iterations: fit.iterations_run,
            stop_reason: fit.stop_reason,
            first_loss: fit.loss_trace[0],
            final_loss: *fit.loss_trace.last().expect("non-empty"),
            mean_row_entropy: fit.alignment.mean_row_entropy(),
            feasibility: *fit.alignment.report(),
        },
        initial_topk,
        topk,
        artifacts,
    };
    write_json(&args.out.join("report.json"), &report)?;
    write_json(
        &args.out.join("timing.json"),
        &Timing {
            phases_ms: vec![
                ("load".into(), load_ms),
                ("initialize".into(), init_ms),
                ("fit".into(), fit_ms),
                ("total".into(), ms(start)),
            ],
        },
    )?;

    let mut msg = format!(
        "{} iterations ({:?}), loss {:.6} -> {:.6}",
        report.fit.iterations, report.fit.stop_reason, report.fit.first_loss, report.fit.final_loss
    );
    if let Some(t) = &report.topk {
        msg.push('\n');
        msg.push_str(&topk_table(t));
    }
    Ok(msg)
}

fn topk_table(t: &TopKReport) -> String {
    let mut s = String::from("k\taccuracy\tstd\tbaseline\n");
    for i in 0..t.k_values.len() {
        s.push_str(&format!(
            "{}\t{:.4}\t{:.4}\t{:.4}\n",
            t.k_values[i], t.accuracy_mean[i], t.accuracy_std[i], t.baseline[i]
        ));
    }
    s
}

#[derive(Debug, Serialize)]
struct SweepEntry {
    lambda: f64,
    topk: TopKReport,
    initial_topk: TopKReport,
    mean_row_entropy: f64,
    loss_mean: Vec<f64>,
    loss_std: Vec<f64>,
    failures: usize,
    failure_messages: Vec<String>,
    iterations: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct SweepReport {
    config: GenConfig,
    replicates: usize,
    hyperparams: Vec<HyperParams>,
    entries: Vec<SweepEntry>,
}

fn lambda_tag(lambda: f64) -> String {
    format!("{lambda:?}")
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<String> {
    if args.lambdas.is_empty() {
        return Err(AccaError::Parameter("need at least one lambda".into()));
    }
    let start = Instant::now();
    let config = args.gen.config(args.seed);
    config.validate()?;
    let hps: Vec<HyperParams> = args.lambdas.iter().map(|&l| args.hyper.hyper(l, args.seed)).collect();
    for hp in &hps {
        hp.validate(config.n)?;
    }
    ensure_dir(&args.out)?;

    let mut sweep_csv = String::from("lambda,k,mean,std,baseline\n");
    let mut entries = Vec::new();
    let mut phases = Vec::new();
    for hp in &hps {
        let t = Instant::now();
        let mc: MonteCarloReport = monte_carlo(hp, &config, args.replicates, &args.k)?;
        phases.push((format!("lambda={}", lambda_tag(hp.lambda)), ms(t)));
        let tag = lambda_tag(hp.lambda);

        let mut table = String::from("k,mean,std,baseline\n");
        for i in 0..mc.topk.k_values.len() {
            let row = format!(
                "{:?},{:?},{:?}",
                mc.topk.accuracy_mean[i], mc.topk.accuracy_std[i], mc.topk.baseline[i]
            );
            table.push_str(&format!("{},{row}\n", mc.topk.k_values[i]));
            sweep_csv.push_str(&format!("{tag},{},{row}\n", mc.topk.k_values[i]));
        }
        atomic_write(&args.out.join(format!("topk_lambda_{tag}.csv")), table.as_bytes())?;

        let mut loss = String::from("iteration,mean,std\n");
        for (i, (m, s)) in mc.loss_mean.iter().zip(&mc.loss_std).enumerate() {
            loss.push_str(&format!("{},{m:?},{s:?}\n", i + 1));
        }
        atomic_write(&args.out.join(format!("loss_lambda_{tag}.csv")), loss.as_bytes())?;

        // first successful replicate is the one rendered
        let sample = &mc.outcomes[0];
        write_pgm(&args.out.join(format!("P_lambda_{tag}.pgm")), &sample.alignment)?;
        if entries.is_empty() {
            write_pgm(&args.out.join("P_true.pgm"), &sample.p_true)?;
        }

        entries.push(SweepEntry {
            lambda: hp.lambda,
            topk: mc.topk,
            initial_topk: mc.initial_topk,
            mean_row_entropy: mc.mean_row_entropy,
            loss_mean: mc.loss_mean,
            loss_std: mc.loss_std,
            failures: mc.failures,
            failure_messages: mc.failure_messages,
            iterations: mc.outcomes.iter().map(|o| o.iterations).collect(),
        });
    }
    atomic_write(&args.out.join("sweep.csv"), sweep_csv.as_bytes())?;
    let report = SweepReport {
        config,
        replicates: args.replicates,
        hyperparams: hps,
        entries,
    };
    write_json(&args.out.join("report.json"), &report)?;
    phases.push(("total".into(), ms(start)));
    write_json(&args.out.join("timing.json"), &Timing { phases_ms: phases })?;

    let mut msg = String::new();
    for e in &report.entries {
        msg.push_str(&format!(
            "lambda={} (mean row entropy {:.3}, {} failed)\n{}",
            e.lambda,
            e.mean_row_entropy,
            e.failures,
            topk_table(&e.topk)
        ));
    }
    Ok(msg)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<String> {
    let p_est = read_matrix_csv(&args.p_est)?;
    let p_true = read_matrix_csv(&args.p_true)?;
    if !p_est.is_square() || p_est.shape() != p_true.shape() {
        return Err(AccaError::Parameter(format!(
            "P_est is {}x{} and P_true is {}x{}; both must be the same square shape",
            p_est.nrows(),
            p_est.ncols(),
            p_true.nrows(),
            p_true.ncols()
        )));
    }
    permutation_targets(&p_true)?;
    let n = p_est.nrows();
    let mut csv = String::from("k,accuracy,baseline\n");
    let mut table = String::from("k\taccuracy\tbaseline\n");
    for &k in &args.k {
        let acc = topk_accuracy(&p_est, &p_true, k)?;
        let base = baseline_accuracy(n, k);
        csv.push_str(&format!("{k},{acc:?},{base:?}\n"));
        table.push_str(&format!("{k}\t{acc:.4}\t{base:.4}\n"));
    }
    let dir = match &args.out {
        Some(d) => d.clone(),
        None => args
            .p_est
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    ensure_dir(&dir)?;
    atomic_write(&dir.join("eval.csv"), csv.as_bytes())?;
    Ok(table)
}
