use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rddgt::engine::{monte_carlo, Algorithm, EngineError, MonteCarloResult, Problem};
use rddgt::harness::io::{read_trace, write_trace, TraceMeta};
use rddgt::harness::plot::{emit_plot, PlotOptions, PlotSeries};
use rddgt::harness::{load_config, HarnessError, RunConfig};
use rddgt::metrics::{iterations_to_threshold, tail_mean};
use rddgt::model::ModelError;
use rddgt::noise::NoiseModel;
use rddgt::solve_centralized;

const EXIT_USAGE: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "rddgt", version, about = "Noise-robust distributed economic dispatch experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the dispatch problem centrally and print the optimum.
    Solve(SolveArgs),
    /// Run one algorithm, optionally as a Monte Carlo batch.
    Run(RunArgs),
    /// Run several algorithms on a shared instance, noise and seed.
    Compare(CompareArgs),
    /// Run the Cartesian product of parameter lists.
    Sweep(SweepArgs),
    /// Plot one column of one or more trace CSVs.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write the solution as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long = "K")]
    iterations: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: u64,
    /// Noise on both update sites, e.g. `gaussian:1.0`, `quantizer:-50:50:8`, `none`.
    #[arg(long)]
    noise: Option<NoiseModel>,
    #[arg(long)]
    noise_dual: Option<NoiseModel>,
    #[arg(long)]
    noise_aux: Option<NoiseModel>,
    /// Threshold fraction of the first-iteration error.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for Monte Carlo trials.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    algorithm: Option<String>,
}

#[derive(Debug, Args)]
struct StyleArgs {
    #[arg(long, default_value = "err_to_opt")]
    column: String,
    #[arg(long)]
    log_y: bool,
    #[arg(long)]
    title: Option<String>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long = "algorithms", alias = "algorithm", value_delimiter = ',', required = true)]
    algorithms: Vec<String>,
    #[command(flatten)]
    style: StyleArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long = "alphas", value_delimiter = ',')]
    alphas: Vec<f64>,
    #[arg(long = "etas", value_delimiter = ',')]
    etas: Vec<f64>,
    #[arg(long = "gammas", value_delimiter = ',')]
    gammas: Vec<f64>,
    #[arg(long = "betas", value_delimiter = ',')]
    betas: Vec<f64>,
    /// Values applied to eta and gamma together.
    #[arg(long = "suppression", value_delimiter = ',', conflicts_with_all = ["etas", "gammas"])]
    suppression: Vec<f64>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(required = true)]
    csv: Vec<PathBuf>,
    /// Legend labels, one per CSV (default: file stems).
    #[arg(long, value_delimiter = ',')]
    labels: Vec<String>,
    #[command(flatten)]
    style: StyleArgs,
    #[arg(long, default_value = "plot.svg")]
    out: PathBuf,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let code = match &e {
            HarnessError::Engine(EngineError::Model(ModelError::InfeasibleDemand { .. })) => EXIT_INFEASIBLE,
            HarnessError::Engine(EngineError::Model(_) | EngineError::InvalidParams { .. } | EngineError::Network(_))
            | HarnessError::Engine(EngineError::UnknownAlgorithm(_))
            | HarnessError::UnknownPreset(_)
            | HarnessError::Parse { .. }
            | HarnessError::Validation { .. }
            | HarnessError::Network(_)
            | HarnessError::MissingColumn { .. }
            | HarnessError::AxisMismatch(_) => EXIT_USAGE,
            HarnessError::Engine(EngineError::ShapeMismatch(_))
            | HarnessError::Io(_)
            | HarnessError::Csv(_)
            | HarnessError::Json(_) => EXIT_RUNTIME,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        HarnessError::from(e).into()
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        HarnessError::from(e).into()
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Plot(args) => cmd_plot(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn read_config(path: &Path) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(load_config(&text)?)
}

/// Loads `--config` (or a preset with the CLI defaults) and applies flag overrides.
fn build_config(common: &Common, algorithm: Option<&str>) -> Result<RunConfig, Failure> {
    let mut cfg = match (&common.config, &common.preset) {
        (Some(path), preset) => {
            let mut cfg = read_config(path)?;
            if let Some(p) = preset {
                cfg.preset = Some(p.clone());
                cfg.instance = None;
            }
            cfg
        }
        (None, Some(p)) => RunConfig::for_preset(p, Algorithm::Rddgt, 0.01, 3000, common.seed),
        (None, None) => return Err(Failure::usage("either --preset or --config is required")),
    };
    if let Some(a) = algorithm {
        cfg.algorithm = a.to_string();
    }
    cfg.seed = common.seed;
    if let Some(v) = common.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = common.eta {
        cfg.eta = v;
    }
    if let Some(v) = common.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = common.beta {
        cfg.beta = v;
    }
    if let Some(v) = common.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = common.trials {
        cfg.trials = v;
    }
    if let Some(v) = common.threshold {
        cfg.threshold = v;
    }
    if let Some(n) = &common.noise {
        cfg.noise_dual = n.clone();
        cfg.noise_aux = n.clone();
    }
    if let Some(n) = &common.noise_dual {
        cfg.noise_dual = n.clone();
    }
    if let Some(n) = &common.noise_aux {
        cfg.noise_aux = n.clone();
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn init_jobs(jobs: Option<usize>) -> Result<(), Failure> {
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Failure::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Failure { code: EXIT_RUNTIME, message: e.to_string() })?;
    }
    Ok(())
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from("results"))
}

fn execute(cfg: &RunConfig, problem: &Problem) -> Result<MonteCarloResult, Failure> {
    Ok(monte_carlo(problem, &cfg.run_spec()?, cfg.trials)?)
}

fn persist(cfg: &RunConfig, result: &MonteCarloResult, path: &Path, label: &str) -> Result<(), Failure> {
    let meta = TraceMeta {
        label,
        config: serde_json::to_value(cfg).map_err(HarnessError::from)?,
        seed: cfg.seed,
        trials: cfg.trials,
        trial_seeds: (0..cfg.trials as u32).map(|t| (cfg.seed, t)).collect(),
        clamp_count: result.trace.clamp_count,
        summaries: &result.summaries,
    };
    write_trace(&result.trace, path, &meta)?;
    Ok(())
}

fn summary_line(label: &str, result: &MonteCarloResult, threshold: f64) -> String {
    let last = result.trace.last();
    let errs = result.trace.series(|r| r.err_to_opt);
    let itt = iterations_to_threshold(&errs, threshold).map_or("-".to_string(), |k| k.to_string());
    format!(
        "{label}: k={} err_to_opt={:.6e} mismatch={:.6e} consensus_err={:.6e} steady_state_err={:.6e} iterations_to_threshold={itt}",
        last.k,
        last.err_to_opt,
        last.mismatch,
        last.consensus_err,
        tail_mean(&errs, rddgt::engine::STEADY_STATE_FRACTION),
    )
}

fn cmd_solve(args: SolveArgs) -> Result<(), Failure> {
    let instance = match (&args.config, &args.preset) {
        (Some(path), _) => read_config(path)?.instance()?,
        (None, Some(p)) => rddgt::harness::preset(p)?.0,
        (None, None) => return Err(Failure::usage("either --preset or --config is required")),
    };
    let sol = solve_centralized(&instance).map_err(|e| HarnessError::Engine(e.into()))?;
    let totals = instance.total_demand();
    let residual: f64 =
        (0..sol.w_star.ncols()).map(|c| (sol.w_star.column(c).sum() - totals[c]).abs()).fold(0.0, f64::max);
    let mut text = String::new();
    for (c, lambda) in sol.lambda_star.iter().enumerate() {
        let _ = writeln!(text, "lambda*[{c}] = {lambda:.9}");
    }
    for (i, agent) in instance.agents().iter().enumerate() {
        if agent.w_hi > agent.w_lo {
            let row: Vec<String> = sol.w_star.row(i).iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(text, "w*[{}] = {}", i + 1, row.join(", "));
        }
    }
    let _ = writeln!(text, "f* = {:.9}", sol.f_star);
    let _ = writeln!(text, "residual = {residual:.3e}");
    print!("{text}");
    if let Some(path) = args.json {
        let doc = serde_json::json!({
            "lambda_star": sol.lambda_star,
            "w_star": (0..sol.w_star.nrows()).map(|i| sol.w_star.row(i).iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
            "f_star": sol.f_star,
            "residual": residual,
        });
        fs::write(&path, serde_json::to_string_pretty(&doc).map_err(HarnessError::from)? + "\n")?;
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    init_jobs(args.common.jobs)?;
    let cfg = build_config(&args.common, args.algorithm.as_deref())?;
    let problem = cfg.problem()?;
    let result = execute(&cfg, &problem)?;
    let path = out_dir(&cfg).join(format!("{}.csv", cfg.algorithm));
    persist(&cfg, &result, &path, &cfg.algorithm)?;
    println!("{}", summary_line(&cfg.algorithm, &result, cfg.threshold));
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), Failure> {
    init_jobs(args.common.jobs)?;
    if args.algorithms.len() < 2 {
        return Err(Failure::usage("compare needs at least two algorithms"));
    }
    let base = build_config(&args.common, None)?;
    let problem = base.problem()?;
    let dir = out_dir(&base);
    let mut series = Vec::new();
    for name in &args.algorithms {
        let mut cfg = base.clone();
        cfg.algorithm = name.clone();
        cfg.validate()?;
        let result = execute(&cfg, &problem)?;
        let path = dir.join(format!("{name}.csv"));
        persist(&cfg, &result, &path, name)?;
        println!("{}", summary_line(name, &result, cfg.threshold));
        let table = read_trace(&path)?;
        series.push(PlotSeries { label: name.clone(), x: table.column("k")?, y: table.column(&args.style.column)? });
    }
    let svg = dir.join("compare.svg");
    emit_plot(&series, &plot_options(&args.style), &svg)?;
    println!("wrote {}", svg.display());
    Ok(())
}

fn plot_options(style: &StyleArgs) -> PlotOptions {
    PlotOptions {
        title: style.title.clone().unwrap_or_default(),
        y_label: style.column.clone(),
        log_y: style.log_y,
        ..PlotOptions::default()
    }
}

fn or_base(values: &[f64], base: f64) -> Vec<f64> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    init_jobs(args.common.jobs)?;
    if [&args.alphas, &args.etas, &args.gammas, &args.betas, &args.suppression].iter().all(|v| v.is_empty()) {
        return Err(Failure::usage("empty grid: give at least one of --alphas, --etas, --gammas, --betas, --suppression"));
    }
    let base = build_config(&args.common, args.algorithm.as_deref())?;
    let problem = base.problem()?;
    let dir = out_dir(&base);

    let pairs: Vec<(f64, f64)> = if args.suppression.is_empty() {
        let etas = or_base(&args.etas, base.eta);
        let gammas = or_base(&args.gammas, base.gamma);
        etas.iter().flat_map(|&e| gammas.iter().map(move |&g| (e, g))).collect()
    } else {
        args.suppression.iter().map(|&s| (s, s)).collect()
    };
    let mut grid = Vec::new();
    for alpha in or_base(&args.alphas, base.alpha) {
        for &(eta, gamma) in &pairs {
            for beta in or_base(&args.betas, base.beta) {
                grid.push((alpha, eta, gamma, beta));
            }
        }
    }

    let mut summary = String::from(
        "index,alpha,eta,gamma,beta,iterations_to_threshold,steady_state_err,steady_state_stderr,final_err_to_opt\n",
    );
    for (idx, &(alpha, eta, gamma, beta)) in grid.iter().enumerate() {
        let mut cfg = base.clone();
        (cfg.alpha, cfg.eta, cfg.gamma, cfg.beta) = (alpha, eta, gamma, beta);
        cfg.validate()?;
        let result = execute(&cfg, &problem)?;
        let label = format!("sweep_{idx:03}");
        persist(&cfg, &result, &dir.join(format!("{label}.csv")), &label)?;
        let errs = result.trace.series(|r| r.err_to_opt);
        let itt = iterations_to_threshold(&errs, cfg.threshold).map_or(String::new(), |k| k.to_string());
        let steady: Vec<f64> = result.summaries.iter().map(|s| s.steady_state_err).collect();
        let (mean, stderr) = mean_stderr(&steady);
        let _ = writeln!(
            summary,
            "{idx},{alpha},{eta},{gamma},{beta},{itt},{mean:.11e},{stderr:.11e},{:.11e}",
            result.trace.last().err_to_opt
        );
        println!(
            "{label}: alpha={alpha} eta={eta} gamma={gamma} beta={beta} iterations_to_threshold={} steady_state_err={mean:.6e}",
            if itt.is_empty() { "-" } else { &itt }
        );
    }
    let path = dir.join("summary.csv");
    fs::write(&path, summary)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn cmd_plot(args: PlotArgs) -> Result<(), Failure> {
    if !args.labels.is_empty() && args.labels.len() != args.csv.len() {
        return Err(Failure::usage("--labels needs one label per CSV"));
    }
    let mut series = Vec::new();
    for (i, path) in args.csv.iter().enumerate() {
        let table = read_trace(path).map_err(|e| Failure::usage(e.to_string()))?;
        let label = match args.labels.get(i) {
            Some(l) => l.clone(),
            None => path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned()),
        };
        series.push(PlotSeries { label, x: table.column("k")?, y: table.column(&args.style.column)? });
    }
    emit_plot(&series, &plot_options(&args.style), &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}
