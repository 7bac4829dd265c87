use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gofscreen::data::{load_csv, DataError, Dataset};
use gofscreen::iterative::{run_iterative, IterError, IterativeOptions, PenaltyGrid};
use gofscreen::loss::LossSpec;
use gofscreen::marginal_fit::FitError;
use gofscreen::report::{self, IterateReport, ScreenReport, SimulateReport, FORMAT_VERSION};
use gofscreen::screening::{
    default_num_basis, screen_all, screen_and_select, ScreenConfig, ScreenError, ThresholdRule,
};
use gofscreen::simbench::{run_benchmark, SimError, SimModel};

#[derive(Parser)]
#[command(
    name = "gofscreen",
    version,
    about = "Goodness-of-fit nonparametric screening"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank covariates by marginal goodness of fit and select by a threshold.
    Screen(ScreenArgs),
    /// Iterative screening with group-penalized refits.
    Iterate(IterateArgs),
    /// Minimum-model-size benchmark on a simulated model.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Gaussian,
    Logistic,
    Poisson,
    Expclass,
    Quantile,
}

#[derive(Args)]
struct LossArgs {
    #[arg(long, value_enum)]
    loss: LossArg,
    /// Quantile level, required with `--loss quantile`.
    #[arg(long)]
    alpha: Option<f64>,
    /// Number of spline basis functions; defaults to ceil(n^(1/5)) + 2.
    #[arg(long)]
    dn: Option<usize>,
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    input: PathBuf,
    /// Response column name, or 1-based column number with `--no-header`.
    #[arg(long)]
    response: String,
    #[arg(long)]
    no_header: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Structured (JSON) result file.
    #[arg(long)]
    out: PathBuf,
    /// Optional tabular (CSV) result file.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args)]
struct ScreenArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    loss: LossArgs,
    /// perm, manual:V or topk:K.
    #[arg(long, default_value = "perm")]
    threshold: ThresholdRule,
    /// Permutation rounds for `--threshold perm`.
    #[arg(long, default_value_t = 1)]
    perms: usize,
    /// Quantile of the pooled permuted statistics for `--threshold perm`.
    #[arg(long, default_value_t = 1.0)]
    perm_quantile: f64,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct IterateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    loss: LossArgs,
    #[arg(long, default_value_t = 1)]
    perms: usize,
    #[arg(long, default_value_t = 1.0)]
    perm_quantile: f64,
    /// Covariates admitted per round (1 gives the greedy variant).
    #[arg(long)]
    greedy_cap: Option<usize>,
    /// Model size at which to stop; defaults to ceil(n / (d_n ln n)).
    #[arg(long)]
    max_size: Option<usize>,
    #[arg(long, default_value_t = 50)]
    max_rounds: usize,
    /// `auto`, `auto:POINTS:MIN_RATIO`, or a comma-separated list of penalties.
    #[arg(long, default_value = "auto")]
    penalty_grid: String,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=8))]
    model: u8,
    #[arg(long, default_value_t = 400)]
    n: usize,
    #[arg(long)]
    p: usize,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    /// Defaults to the loss matching the model's response.
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    dn: Option<usize>,
    /// Also apply a selection rule and report how often it covers the truth.
    #[arg(long)]
    threshold: Option<ThresholdRule>,
    #[arg(long, default_value_t = 1)]
    perms: usize,
    #[arg(long, default_value_t = 1.0)]
    perm_quantile: f64,
    #[command(flatten)]
    run: RunArgs,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
    fn data(message: impl ToString) -> Self {
        Self {
            code: 2,
            message: message.to_string(),
        }
    }
    fn numerical(message: impl ToString) -> Self {
        Self {
            code: 3,
            message: message.to_string(),
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        match e {
            DataError::IncompatibleResponse { .. } => Failure::usage(e.to_string()),
            _ => Failure::data(e),
        }
    }
}

impl From<FitError> for Failure {
    fn from(e: FitError) -> Self {
        match e {
            FitError::Loss(_) => Failure::data(e),
            FitError::InvalidOptions | FitError::TooManyParameters { .. } => {
                Failure::usage(e.to_string())
            }
            _ => Failure::numerical(e),
        }
    }
}

impl From<ScreenError> for Failure {
    fn from(e: ScreenError) -> Self {
        match e {
            ScreenError::Config(_) => Failure::usage(e.to_string()),
            ScreenError::NullFit(f) => f.into(),
        }
    }
}

impl From<IterError> for Failure {
    fn from(e: IterError) -> Self {
        match e {
            IterError::Screen(s) => s.into(),
            IterError::Fit(f) => f.into(),
            IterError::Options(_) => Failure::usage(e.to_string()),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Data(d) => d.into(),
            SimError::Screen(s) => s.into(),
            SimError::AllFailed(_) => Failure::numerical(e),
            _ => Failure::usage(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::data(format!("cannot write {}: {e}", path.display()))
}

fn loss_spec(loss: LossArg, alpha: Option<f64>) -> Result<LossSpec, Failure> {
    match (loss, alpha) {
        (LossArg::Quantile, Some(a)) => {
            LossSpec::quantile(a).map_err(|e| Failure::usage(e.to_string()))
        }
        (LossArg::Quantile, None) => Err(Failure::usage("--loss quantile requires --alpha")),
        (_, Some(_)) => Err(Failure::usage("--alpha only applies to --loss quantile")),
        (LossArg::Gaussian, None) => Ok(LossSpec::Gaussian),
        (LossArg::Logistic, None) => Ok(LossSpec::Logistic),
        (LossArg::Poisson, None) => Ok(LossSpec::Poisson),
        (LossArg::Expclass, None) => Ok(LossSpec::ExponentialClassification),
    }
}

fn config(loss: LossSpec, dn: Option<usize>, n: usize) -> ScreenConfig {
    ScreenConfig::new(loss, dn.unwrap_or_else(|| default_num_basis(n)))
}

fn with_perm_settings(rule: ThresholdRule, perms: usize, q: f64) -> ThresholdRule {
    match rule {
        ThresholdRule::Permutation { .. } => ThresholdRule::Permutation { n_perm: perms, q },
        other => other,
    }
}

fn parse_penalty_grid(s: &str) -> Result<PenaltyGrid, Failure> {
    let bad = || Failure::usage(format!("bad --penalty-grid `{s}`"));
    if s == "auto" {
        return Ok(PenaltyGrid::default());
    }
    if let Some(rest) = s.strip_prefix("auto:") {
        let (points, ratio) = rest.split_once(':').ok_or_else(bad)?;
        return Ok(PenaltyGrid::Auto {
            points: points.parse().map_err(|_| bad())?,
            min_ratio: ratio.parse().map_err(|_| bad())?,
        });
    }
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>, _>>()
        .map(PenaltyGrid::Explicit)
}

fn load(input: &InputArgs, loss: &LossSpec) -> Result<Dataset, Failure> {
    let data = load_csv(&input.input, &input.response, !input.no_header)?;
    Ok(data.prepare_for(loss)?)
}

fn names(data: &Dataset) -> Vec<String> {
    (0..data.p()).map(|j| data.column_name(j)).collect()
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_failure(path, e))
}

fn screen(args: ScreenArgs) -> Result<(), Failure> {
    let loss = loss_spec(args.loss.loss, args.loss.alpha)?;
    let data = load(&args.input, &loss)?;
    let cfg = config(loss, args.loss.dn, data.n());
    let rule = with_perm_settings(args.threshold, args.perms, args.perm_quantile);
    let result = screen_and_select(&data, &cfg, rule, args.run.seed)?;
    let column_names = names(&data);
    if let Some(path) = &args.run.table {
        report::write_screen_table(create(path)?, &result, &column_names)
            .map_err(|e| io_failure(path, e))?;
    }
    let out = ScreenReport {
        format_version: FORMAT_VERSION,
        n: data.n(),
        p: data.p(),
        response: args.input.response,
        column_names,
        config: cfg,
        threshold_rule: rule,
        seed: args.run.seed,
        result,
    };
    report::write_json(create(&args.run.out)?, &out).map_err(|e| io_failure(&args.run.out, e))
}

fn iterate(args: IterateArgs) -> Result<(), Failure> {
    let loss = loss_spec(args.loss.loss, args.loss.alpha)?;
    let data = load(&args.input, &loss)?;
    let cfg = config(loss, args.loss.dn, data.n());
    let options = IterativeOptions {
        max_model_size: args.max_size,
        greedy_cap: args.greedy_cap,
        n_perm: args.perms,
        perm_quantile: args.perm_quantile,
        penalty_grid: parse_penalty_grid(&args.penalty_grid)?,
        seed: args.run.seed,
        max_rounds: args.max_rounds,
    };
    let (selected, trace) = run_iterative(&data, &cfg, &options)?;
    let mut marginal = screen_all(&data, &cfg)?;
    if let Some(first) = trace.rounds.first() {
        marginal = marginal.with_threshold(first.threshold);
    }
    let column_names = names(&data);
    if let Some(path) = &args.run.table {
        report::write_trace_table(create(path)?, &trace).map_err(|e| io_failure(path, e))?;
    }
    let out = IterateReport {
        format_version: FORMAT_VERSION,
        n: data.n(),
        p: data.p(),
        response: args.input.response,
        selected_names: selected.iter().map(|&j| column_names[j].clone()).collect(),
        column_names,
        config: cfg,
        options,
        selected,
        trace,
        marginal,
    };
    report::write_json(create(&args.run.out)?, &out).map_err(|e| io_failure(&args.run.out, e))
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let template = SimModel::new(args.model, args.n, args.p, args.run.seed);
    let loss = match args.loss {
        Some(l) => loss_spec(l, args.alpha)?,
        None if args.alpha.is_some() => {
            return Err(Failure::usage("--alpha only applies to --loss quantile"))
        }
        None => template.natural_loss(),
    };
    let cfg = config(loss, args.dn, args.n);
    let rule = args
        .threshold
        .map(|r| with_perm_settings(r, args.perms, args.perm_quantile));
    let summary = run_benchmark(&template, args.reps, &cfg, rule)?;
    if let Some(path) = &args.run.table {
        report::write_summary_table(create(path)?, &summary).map_err(|e| io_failure(path, e))?;
    }
    let out = SimulateReport {
        format_version: FORMAT_VERSION,
        summary,
    };
    report::write_json(create(&args.run.out)?, &out).map_err(|e| io_failure(&args.run.out, e))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let threads = match &cli.command {
        Command::Screen(a) => a.run.threads,
        Command::Iterate(a) => a.run.threads,
        Command::Simulate(a) => a.run.threads,
    };
    let threads =
        threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return Err(Failure::usage("--threads must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::numerical(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Screen(a) => screen(a),
        Command::Iterate(a) => iterate(a),
        Command::Simulate(a) => simulate(a),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
