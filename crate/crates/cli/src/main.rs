//! `stabkit` command-line front end.
//!
//! Exit codes: 0 success, 1 invalid parameters or flags, 2 the requested
//! error bound is not attainable (results are still produced), 3 input or
//! output failure, 4 model fitting failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stabkit::boosting::BoostConfig;
use stabkit::bounds::{self, Assumption, ParamRequest, SolvedParams};
use stabkit::data::{self, DataError, Dataset, Family};
use stabkit::simlab::{GridConfig, SimError};
use stabkit::stabsel::{self, SamplingScheme, StabSelConfig, StabSelError};

mod report;

use report::{PathsWriter, RunReport};

const DEFAULT_SEED: u64 = 2718;

#[derive(Debug)]
enum CliError {
    Param(String),
    Io(String),
    Fit(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Param(_) => 1,
            CliError::Io(_) => 3,
            CliError::Fit(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Param(m) | CliError::Io(m) | CliError::Fit(m) => m,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::MissingColumn(_) | DataError::UnknownFamily(_) => {
                CliError::Param(e.to_string())
            }
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<bounds::BoundError> for CliError {
    fn from(e: bounds::BoundError) -> Self {
        CliError::Param(e.to_string())
    }
}

impl From<StabSelError> for CliError {
    fn from(e: StabSelError) -> Self {
        match e {
            StabSelError::Fit { .. } => CliError::Fit(e.to_string()),
            _ => CliError::Param(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Io { .. } => CliError::Io(e.to_string()),
            SimError::Replicate { .. } => CliError::Fit(e.to_string()),
            _ => CliError::Param(e.to_string()),
        }
    }
}

/// Outcome of a successful command: whether the bound was attainable.
enum Outcome {
    Done,
    NotAttainable,
    SettingsFailed,
}

#[derive(Parser)]
#[command(
    name = "stabkit",
    version,
    about = "Stability selection with boosting and error-bound tuning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the missing one of q, cutoff and PFER
    Params(ParamsArgs),
    /// Run stability selection on a CSV dataset
    Run(RunArgs),
    /// Run stability selection and export the stability paths
    Paths(PathsArgs),
    /// Run a simulation grid and write CSV reports
    Simulate(SimulateArgs),
}

#[derive(Args, Clone)]
struct BoundArgs {
    /// Per-fit number of selected base-learners
    #[arg(long)]
    q: Option<usize>,
    /// Selection-frequency threshold
    #[arg(long)]
    cutoff: Option<f64>,
    /// Bound on the expected number of false positives
    #[arg(long)]
    pfer: Option<f64>,
    /// Error-bound assumption: none, unimodal or r-concave
    #[arg(long, default_value = "none")]
    assumption: Assumption,
    /// Number of subsamples (or complementary pairs); defaults to 100
    /// without an assumption and 50 otherwise
    #[arg(long = "B", alias = "b")]
    b: Option<usize>,
}

impl BoundArgs {
    fn b(&self) -> usize {
        self.b
            .unwrap_or(SamplingScheme::default_for(self.assumption).b())
    }

    fn solve(&self, p: usize) -> Result<SolvedParams, CliError> {
        let given = [self.q.is_some(), self.cutoff.is_some(), self.pfer.is_some()];
        if given.iter().filter(|g| **g).count() != 2 {
            return Err(CliError::Param(
                "specify exactly two of --q, --cutoff and --pfer".into(),
            ));
        }
        Ok(bounds::solve_params(&ParamRequest {
            q: self.q,
            pi_thr: self.cutoff,
            pfer_max: self.pfer,
            p,
            b: self.b(),
            assumption: Some(self.assumption),
        })?)
    }
}

#[derive(Args)]
struct ParamsArgs {
    /// Number of candidate base-learners
    #[arg(long)]
    p: usize,
    #[command(flatten)]
    bound: BoundArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Subsample,
    Pairs,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Input CSV with a header row
    #[arg(long)]
    data: PathBuf,
    /// Name of the response column
    #[arg(long)]
    response: String,
    /// Response family: gaussian or binomial
    #[arg(long, default_value = "gaussian")]
    family: Family,
    #[command(flatten)]
    bound: BoundArgs,
    /// Sampling scheme; defaults to pairs for the unimodal and r-concave bounds
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    /// Boosting step length
    #[arg(long, default_value_t = 0.1)]
    nu: f64,
    /// Maximum boosting iterations per fit
    #[arg(long, default_value_t = 10_000)]
    m_max: usize,
    /// Master seed for subsampling
    #[arg(long, env = "STABKIT_SEED")]
    seed: Option<u64>,
    /// Write the JSON result here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write stability paths as CSV
    #[arg(long)]
    paths: Option<PathBuf>,
}

#[derive(Args)]
struct PathsArgs {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// Grid description in TOML; the built-in desk-scale grid if omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the CSV reports
    #[arg(long)]
    out: PathBuf,
    /// Master seed; overrides the seed in the config file
    #[arg(long, env = "STABKIT_SEED")]
    seed: Option<u64>,
    /// Override the number of replicates per setting
    #[arg(long)]
    replicates: Option<usize>,
}

fn cmd_params(args: &ParamsArgs) -> Result<Outcome, CliError> {
    let solved = args.bound.solve(args.p)?;
    let json = serde_json::to_string_pretty(&solved).expect("parameters serialize");
    println!("{json}");
    for w in &solved.warnings {
        eprintln!("warning: {w}");
    }
    Ok(if solved.attainable {
        Outcome::Done
    } else {
        Outcome::NotAttainable
    })
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    let seed = seed.unwrap_or(DEFAULT_SEED);
    eprintln!("seed: {seed}");
    seed
}

struct Analysis {
    data: Dataset,
    solved: SolvedParams,
    config: StabSelConfig,
    result: stabsel::StabSelResult,
}

fn analyse(args: &RunArgs, record_paths: bool) -> Result<Analysis, CliError> {
    let data = data::load_csv(&args.data, &args.response, args.family)?;
    let solved = args.bound.solve(data.p())?;
    let b = solved.b;
    let scheme = match (args.scheme, solved.assumption) {
        (Some(SchemeArg::Subsample), a) if a.needs_grid() => {
            return Err(CliError::Param(format!(
                "the {a} bound requires complementary pairs (--scheme pairs)"
            )))
        }
        (Some(SchemeArg::Subsample), _) => SamplingScheme::Subsample { b },
        (Some(SchemeArg::Pairs), _) => SamplingScheme::ComplementaryPairs { b },
        (None, a) => match SamplingScheme::default_for(a) {
            SamplingScheme::Subsample { .. } => SamplingScheme::Subsample { b },
            SamplingScheme::ComplementaryPairs { .. } => SamplingScheme::ComplementaryPairs { b },
        },
    };
    let config = StabSelConfig {
        q: solved.q,
        pi_thr: solved.pi_thr,
        scheme,
        seed: resolve_seed(args.seed),
        boost: BoostConfig {
            nu: args.nu,
            m_max: args.m_max,
            target_q: None,
        },
        record_paths: record_paths || args.paths.is_some(),
    };
    let result = stabsel::run(&data, &config)?;
    Ok(Analysis {
        data,
        solved,
        config,
        result,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}

fn write_paths(path: &Path, a: &Analysis) -> Result<(), CliError> {
    let rows = stabsel::stability_paths(&a.result)?;
    let file = std::fs::File::create(path)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", path.display())))?;
    PathsWriter::new(file, a.data.col_names())
        .write(&rows)
        .map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}

fn cmd_run(args: &RunArgs, paths_out: Option<&Path>) -> Result<Outcome, CliError> {
    let a = analyse(args, paths_out.is_some())?;
    let report = RunReport::new(&a.data, &a.solved, &a.config, &a.result, args);
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    match &args.out {
        Some(path) => write_file(path, &json)?,
        None => print!("{json}"),
    }
    if let Some(path) = paths_out.or(args.paths.as_deref()) {
        write_paths(path, &a)?;
    }
    for w in &a.solved.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!(
        "stable set ({} of {} at cutoff {}): {}",
        report.stable_set.len(),
        a.data.p(),
        a.solved.pi_thr,
        report.stable_set.join(", ")
    );
    Ok(if a.solved.attainable {
        Outcome::Done
    } else {
        Outcome::NotAttainable
    })
}

fn cmd_simulate(args: &SimulateArgs) -> Result<Outcome, CliError> {
    let mut grid = match &args.config {
        Some(path) => GridConfig::from_path(path)?,
        None => GridConfig::desk_scale(),
    };
    if let Some(r) = args.replicates {
        grid.replicates = r;
    }
    let seed = resolve_seed(args.seed.or(grid.seed));
    let report = stabkit::simlab::run_grid(&grid, seed)?;
    report.write_all(&args.out)?;
    eprintln!(
        "{} settings completed, {} failed; violation rate {:.3}; reports in {}",
        report.results.len(),
        report.failed.len(),
        report.violation_rate(),
        args.out.display()
    );
    for f in &report.failed {
        eprintln!("setting {} failed: {}", f.setting_id, f.error);
    }
    Ok(if report.failed.is_empty() {
        Outcome::Done
    } else {
        Outcome::SettingsFailed
    })
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("STABKIT_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().ok().filter(|&t| t > 0).ok_or_else(|| {
        CliError::Param(format!(
            "STABKIT_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Param(e.to_string()))
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
    let outcome = configure_threads().and_then(|()| match &cli.command {
        Command::Params(args) => cmd_params(args),
        Command::Run(args) => cmd_run(args, None),
        Command::Paths(args) => {
            let Some(path) = args.run.paths.clone() else {
                return Err(CliError::Param("paths requires --paths <FILE>".into()));
            };
            cmd_run(&args.run, Some(&path))
        }
        Command::Simulate(args) => cmd_simulate(args),
    });
    match outcome {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotAttainable) => ExitCode::from(2),
        Ok(Outcome::SettingsFailed) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
