//! `ncm`: data generation, training, evaluation and bound verification for
//! neural closure models.

mod error;
mod manifest;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use ncm::datagen::{generate, GenConfig};
use ncm::grid::{Dataset, Equation, Split, Trajectory};
use ncm::io::{load_dataset, save_dataset};
use ncm::metrics::{continuous_suite, discrete_suite, ErrorSeries, SuiteReport};
use ncm::nn::{load_checkpoint_for, save_checkpoint, CnnArchitecture};
use ncm::solvers::{Method, SolverConfig};
use ncm::training::{
    init_params, train, write_history_csv, Approach, Discretisation, EpochRecord, Model,
    TrainConfig, KS_DT, PRESETS,
};

use error::{CliError, CliResult, WithPath};
use manifest::{InputFile, Manifest};

pub const DATASET_FILE: &str = "dataset.ncm1";
pub const FINE_DATASET_FILE: &str = "fine.ncm1";
pub const FINAL_CHECKPOINT: &str = "final.ncp1";
pub const BEST_CHECKPOINT: &str = "best.ncp1";
pub const LOSS_CSV: &str = "loss.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const ERRORS_CSV: &str = "errors.csv";
pub const THEOREMS_CSV: &str = "theorems.csv";

#[derive(Parser, Debug)]
#[command(name = "ncm", version, about = "Neural closure models for 1-D periodic PDEs")]
struct Cli {
    /// Worker threads for per-trajectory parallelism (results do not depend on it).
    #[arg(long, global = true, env = "NCM_WORKERS", default_value_t = 1)]
    workers: usize,

    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a reference dataset.
    GenData(GenArgs),
    /// Train a closure network on a dataset.
    Train(TrainArgs),
    /// Score a checkpoint, or the coarse model without closure, on a dataset split.
    Evaluate(EvalArgs),
    /// Check the error-propagation bounds on randomly drawn linear fixtures.
    VerifyTheorems(TheoremArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, value_enum)]
    preset: EquationArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of trajectories; the split proportions of the preset are kept.
    #[arg(long)]
    trajectories: Option<usize>,
    /// Also store the fine-grid trajectories.
    #[arg(long)]
    fine: bool,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    /// Dataset file.
    #[arg(long)]
    data: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Named configuration; the other flags override it.
    #[arg(long)]
    preset: Option<String>,
    /// derivfit, dto or otd.
    #[arg(long)]
    approach: Option<Approach>,
    /// Unroll length in snapshot intervals.
    #[arg(long)]
    nt: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Gradient-norm clipping radius.
    #[arg(long)]
    clip: Option<f64>,
    /// Exponent c of the snapshot weights exp(-2cλt).
    #[arg(long)]
    c_weight: Option<f64>,
    /// METHOD:STEP (rk4, tsit5_fixed, etdrk4) or tsit5_adaptive:TOL.
    #[arg(long, value_parser = parse_solver)]
    solver: Option<SolverConfig>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    discretisation: Option<Discretisation>,
    /// Training trajectories are cut to this many snapshots first.
    #[arg(long)]
    max_snapshots: Option<usize>,
    #[arg(long)]
    validate_every: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint to evaluate.
    #[arg(long, conflicts_with = "baseline", required_unless_present = "baseline")]
    checkpoint: Option<PathBuf>,
    /// Evaluate the coarse model without closure.
    #[arg(long)]
    baseline: bool,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long, value_parser = parse_solver)]
    solver: Option<SolverConfig>,
    #[arg(long, default_value = "fvm")]
    discretisation: Discretisation,
}

#[derive(Args, Debug, Serialize)]
struct TheoremArgs {
    /// Fixtures per suite (default 100 continuous, 1000 discrete).
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Steps per discrete fixture.
    #[arg(long, default_value_t = 50)]
    steps: usize,
    /// Directory for the report and manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum EquationArg {
    Burgers,
    Ks,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum SplitArg {
    Train,
    Validation,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

fn parse_solver(s: &str) -> Result<SolverConfig, String> {
    let (name, value) = s
        .split_once(':')
        .ok_or_else(|| format!("expected METHOD:VALUE, got '{s}'"))?;
    let method: Method = name.parse().map_err(|e: ncm::Error| e.to_string())?;
    let value: f64 = value.parse().map_err(|_| format!("bad number '{value}'"))?;
    let cfg = if method.is_adaptive() {
        SolverConfig::adaptive(value, value)
    } else {
        SolverConfig::fixed(method, value)
    };
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn require_out(out: &Option<PathBuf>) -> CliResult<&Path> {
    out.as_deref()
        .ok_or_else(|| CliError::Config("--out is required".into()))
}

fn equation_name(e: Equation) -> &'static str {
    match e {
        Equation::Burgers => "burgers",
        Equation::KuramotoSivashinsky => "ks",
    }
}

fn load(path: &Path) -> CliResult<Dataset> {
    load_dataset(path).at(path)
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).at(path)?))
}

fn gen_data(args: &GenArgs, workers: usize) -> CliResult<()> {
    let out = require_out(&args.out)?;
    let mut cfg = match args.preset {
        EquationArg::Burgers => GenConfig::burgers(args.seed),
        EquationArg::Ks => GenConfig::ks(args.seed),
    };
    if let Some(n) = args.trajectories {
        let (_, va, te) = cfg.splits;
        let total = cfg.trajectories;
        let (va, te) = (n * va / total, n * te / total);
        cfg.trajectories = n;
        cfg.splits = (n - va - te, va, te);
    }
    cfg.validate()?;
    let mut manifest = Manifest::start(out, "gen-data", workers, &cfg, Vec::new())?;
    let generated = generate::<f64>(&cfg, args.fine)?;
    let path = out.join(DATASET_FILE);
    save_dataset(&generated.coarse, &path).at(&path)?;
    manifest.output(&path);
    let mut hashes = vec![json!({"file": DATASET_FILE, "sha256": manifest::sha256_file(&path)?})];
    if let Some(fine) = &generated.fine {
        let fp = out.join(FINE_DATASET_FILE);
        save_dataset(fine, &fp).at(&fp)?;
        manifest.output(&fp);
        hashes.push(json!({"file": FINE_DATASET_FILE, "sha256": manifest::sha256_file(&fp)?}));
    }
    let (tr, va, te) = cfg.splits;
    log::info!("wrote {} ({tr}/{va}/{te} trajectories)", path.display());
    manifest.finish(
        "ok",
        Some(json!({
            "splits": {"train": tr, "validation": va, "test": te},
            "snapshots": generated.coarse.n_snapshots(),
            "retries": generated.retries,
            "files": hashes,
        })),
    )
}

/// Configuration used when no preset is named.
fn default_train_config(equation: Equation, approach: Approach) -> TrainConfig {
    let name = match (equation, approach) {
        (Equation::Burgers, Approach::DerivativeFit) => "burgers-derivfit",
        (Equation::Burgers, Approach::DiscThenOpt) => "burgers-dto",
        (Equation::Burgers, Approach::OptThenDisc) => "burgers-otd",
        (Equation::KuramotoSivashinsky, Approach::DerivativeFit) => "ks-derivfit",
        (Equation::KuramotoSivashinsky, Approach::DiscThenOpt) => "ks-dto-nt1",
        (Equation::KuramotoSivashinsky, Approach::OptThenDisc) => "ks-otd-short",
    };
    TrainConfig::preset(name).expect("listed preset")
}

fn resolve_train_config(args: &TrainArgs, equation: Equation) -> CliResult<TrainConfig> {
    let mut cfg = match &args.preset {
        Some(name) => {
            let cfg = TrainConfig::preset(name).ok_or_else(|| {
                CliError::Config(format!("unknown preset '{name}'; available: {}", PRESETS.join(", ")))
            })?;
            if !name.starts_with(equation_name(equation)) {
                return Err(CliError::Config(format!(
                    "preset '{name}' does not match the {} dataset",
                    equation_name(equation)
                )));
            }
            cfg
        }
        None => default_train_config(equation, args.approach.unwrap_or(Approach::DiscThenOpt)),
    };
    if let Some(a) = args.approach {
        cfg.approach = a;
    }
    if let Some(n) = args.nt {
        cfg.n_t = n;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = args.batch {
        cfg.batch_size = b;
    }
    if let Some(lr) = args.lr {
        cfg.learning_rate = lr;
    }
    if let Some(c) = args.clip {
        cfg.clip_radius = Some(c);
    }
    if let Some(c) = args.c_weight {
        cfg.weight_exponent = c;
    }
    if let Some(s) = args.solver {
        cfg.solver = s;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(d) = args.discretisation {
        cfg.discretisation = d;
    }
    if let Some(m) = args.max_snapshots {
        cfg.max_snapshots = Some(m);
    }
    if let Some(v) = args.validate_every {
        cfg.validate_every = v;
    }
    if equation == Equation::Burgers && cfg.discretisation == Discretisation::Spectral {
        return Err(CliError::Config("Burgers has no spectral discretisation".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(args: &TrainArgs, workers: usize) -> CliResult<()> {
    let out = require_out(&args.out)?;
    let ds = load(&args.data)?;
    let cfg = resolve_train_config(args, ds.equation)?;
    let model = Model::for_dataset(&ds, cfg.discretisation)?;
    let inputs = vec![InputFile::hash(&args.data, Some(ds.seed))?];
    let mut manifest = Manifest::start(out, "train", workers, &cfg, inputs)?;
    let arch = CnnArchitecture::from_id(model.architecture());
    let params = init_params(arch.clone(), cfg.seed);
    log::info!(
        "training {} ({} parameters) with {} on {} training trajectories",
        arch.id.name(),
        params.len(),
        cfg.approach.name(),
        ds.count(Split::Train)
    );

    let loss_path = out.join(LOSS_CSV);
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut write_err = None;
    let result = train(&model, params, &ds, &cfg, |rec, _| {
        history.push(*rec);
        if rec.epoch % cfg.validate_every == 0 && write_err.is_none() {
            write_err = write_history(&history, &loss_path).err();
        }
    });
    if let Some(e) = write_err {
        return Err(e);
    }
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            write_history(&history, &loss_path)?;
            manifest.output(&loss_path);
            manifest.finish(&format!("failed: {e}"), None)?;
            return Err(e.into());
        }
    };
    write_history(&outcome.history, &loss_path)?;
    manifest.output(&loss_path);
    for (name, p) in [(FINAL_CHECKPOINT, &outcome.params), (BEST_CHECKPOINT, &outcome.best)] {
        let path = out.join(name);
        save_checkpoint(p, &path).at(&path)?;
        manifest.output(path);
    }
    let last = outcome.history.last().expect("epoch 0 is recorded");
    log::info!(
        "done: final loss {:.6e}, best validation {:?}, {} failed steps",
        last.train_loss,
        outcome.best_metric,
        outcome.failed_steps
    );
    manifest.finish(
        "ok",
        Some(json!({
            "initial_loss": outcome.history[0].train_loss,
            "final_loss": last.train_loss,
            "best_validation_metric": outcome.best_metric,
            "failed_steps": outcome.failed_steps,
        })),
    )
}

fn write_history(history: &[EpochRecord], path: &Path) -> CliResult<()> {
    let mut w = create(path)?;
    write_history_csv(history, &mut w).at(path)?;
    w.flush().at(path)
}

/// Solver used for evaluation when none is given.
fn default_eval_solver(equation: Equation) -> SolverConfig {
    match equation {
        Equation::Burgers => SolverConfig::adaptive(SolverConfig::DEFAULT_TOL, SolverConfig::DEFAULT_TOL),
        Equation::KuramotoSivashinsky => SolverConfig::fixed(Method::Etdrk4, KS_DT),
    }
}

fn evaluate_cmd(args: &EvalArgs, workers: usize) -> CliResult<()> {
    let out = require_out(&args.out)?;
    let ds = load(&args.data)?;
    let model = Model::for_dataset(&ds, args.discretisation)?;
    let solver = args.solver.unwrap_or_else(|| default_eval_solver(ds.equation));
    let mut inputs = vec![InputFile::hash(&args.data, Some(ds.seed))?];
    let net = match &args.checkpoint {
        Some(path) => {
            let arch = CnnArchitecture::from_id(model.architecture());
            let p = load_checkpoint_for(path, &arch).at(path)?;
            inputs.push(InputFile::hash(path, None)?);
            Some(p)
        }
        None => None,
    };
    let split: Split = args.split.into();
    let (ids, refs): (Vec<usize>, Vec<&Trajectory>) = ds
        .trajectories()
        .iter()
        .enumerate()
        .filter(|(i, _)| ds.splits()[*i] == split)
        .unzip();
    if refs.is_empty() {
        return Err(CliError::Config(format!("dataset has no {split:?} trajectories")));
    }
    let config = json!({"args": args, "solver": solver});
    let mut manifest = Manifest::start(out, "evaluate", workers, config, inputs)?;
    let eval = model.evaluate(net.as_ref(), &ids, &refs, &solver)?;

    let metrics_path = out.join(METRICS_CSV);
    let mut w = create(&metrics_path)?;
    eval.report.write_csv(&mut w).at(&metrics_path)?;
    w.flush().at(&metrics_path)?;
    manifest.output(&metrics_path);

    let label = match &args.checkpoint {
        Some(p) => p.file_stem().map_or("checkpoint".into(), |s| s.to_string_lossy().into_owned()),
        None => "baseline".to_string(),
    };
    let rmse = eval.report.pooled_rmse;
    let vpt = eval.report.vpt_summary().expect("non-empty split");
    let summary_path = out.join(SUMMARY_CSV);
    let mut w = create(&summary_path)?;
    writeln!(w, "model,trajectories,rmse,vpt_min,vpt_avg,vpt_max").at(&summary_path)?;
    writeln!(w, "{label},{},{rmse:e},{:e},{:e},{:e}", refs.len(), vpt.min, vpt.avg, vpt.max)
        .at(&summary_path)?;
    w.flush().at(&summary_path)?;
    manifest.output(&summary_path);

    let errors_path = out.join(ERRORS_CSV);
    let t_lyap = eval.report.lyapunov_time;
    let mut w = create(&errors_path)?;
    writeln!(w, "trajectory_id,time,lyapunov_time,error,normalised_error").at(&errors_path)?;
    for ((&id, r), p) in ids.iter().zip(&refs).zip(&eval.predictions) {
        let s = ErrorSeries::new(r, p)?;
        for (t, e) in s.times.iter().zip(&s.errors) {
            writeln!(w, "{id},{t:e},{:e},{e:e},{:e}", t / t_lyap, e / s.e_avg).at(&errors_path)?;
        }
    }
    w.flush().at(&errors_path)?;
    manifest.output(&errors_path);

    let unit = if ds.equation == Equation::KuramotoSivashinsky { "Lyapunov times" } else { "time units" };
    println!("{label}: {} {split:?} trajectories", refs.len());
    println!("  RMSE {rmse:.6}");
    println!("  VPT min/avg/max {:.3}/{:.3}/{:.3} {unit}", vpt.min, vpt.avg, vpt.max);
    let result = json!({
        "rmse": rmse,
        "vpt": {"min": vpt.min, "avg": vpt.avg, "max": vpt.max},
        "failures": eval.failures.iter().map(|(id, e)| json!({"trajectory": id, "error": e.to_string()})).collect::<Vec<_>>(),
    });
    if eval.failures.is_empty() {
        manifest.finish("ok", Some(result))
    } else {
        for (id, e) in &eval.failures {
            log::error!("trajectory {id}: {e}");
        }
        manifest.finish("numerical failure", Some(result))?;
        Err(CliError::Numerical(format!(
            "{} of {} forecasts failed",
            eval.failures.len(),
            refs.len()
        )))
    }
}

fn print_suite(r: &SuiteReport) {
    println!(
        "{}: {} fixtures, {} violations, max observed/envelope {:.6}",
        r.name,
        r.instances,
        r.violations.len(),
        r.max_ratio
    );
}

fn verify_cmd(args: &TheoremArgs, workers: usize) -> CliResult<()> {
    let (n_cont, n_disc) = args.instances.map_or((100, 1000), |n| (n, n));
    if args.steps == 0 {
        return Err(CliError::Config("--steps must be positive".into()));
    }
    let mut manifest = match &args.out {
        Some(dir) => Some(Manifest::start(dir, "verify-theorems", workers, args, Vec::new())?),
        None => None,
    };
    let suites = [continuous_suite(args.seed, n_cont)?, discrete_suite(args.seed, n_disc, args.steps)?];
    suites.iter().for_each(print_suite);
    let total: usize = suites.iter().map(|s| s.violations.len()).sum();
    for s in &suites {
        for (i, what) in &s.violations {
            eprintln!("{} fixture {i} (seed {}): {what}", s.name, args.seed);
        }
    }
    if let (Some(dir), Some(m)) = (&args.out, manifest.as_mut()) {
        let path = dir.join(THEOREMS_CSV);
        let mut w = create(&path)?;
        writeln!(w, "suite,instances,violations,max_ratio").at(&path)?;
        for s in &suites {
            writeln!(w, "{},{},{},{:e}", s.name, s.instances, s.violations.len(), s.max_ratio).at(&path)?;
        }
        w.flush().at(&path)?;
        m.output(path);
        let status = if total == 0 { "ok" } else { "violations" };
        m.finish(status, Some(json!({"violations": total})))?;
    }
    if total > 0 {
        return Err(CliError::Numerical(format!("{total} bound violations")));
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    if cli.workers == 0 {
        return Err(CliError::Config("--workers must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    match &cli.command {
        Command::GenData(a) => gen_data(a, cli.workers),
        Command::Train(a) => train_cmd(a, cli.workers),
        Command::Evaluate(a) => evaluate_cmd(a, cli.workers),
        Command::VerifyTheorems(a) => verify_cmd(a, cli.workers),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
