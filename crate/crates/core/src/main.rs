use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use drccmdp::conic::ClarabelBackend;
use drccmdp::instance::{load_config, load_kernel, load_problem, save_problem, RunConfig};
use drccmdp::parallel::Execution;
use drccmdp::problem::{build_benchmark, Problem};
use drccmdp::report::SolveMode;
use drccmdp::sweep::{run_sweep, write_artifacts, PointStatus, CSV_NAME, MANIFEST_NAME};
use drccmdp::Error;

const EXIT_INFEASIBLE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_BAD_INPUT: u8 = 4;

/// Name accepted by `--instance` for the built-in machine-replacement instance.
const BUILTIN_BENCHMARK: &str = "benchmark";

#[derive(Parser)]
#[command(
    name = "drccmdp",
    version,
    about = "Distributionally robust chance-constrained MDP solver"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve an instance at one radius or over a sweep of radii.
    Solve(SolveArgs),
    /// Write the machine-replacement instance as a JSON instance file.
    Benchmark {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Individual,
    Joint,
    Mixture,
}

impl From<Mode> for SolveMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Individual => SolveMode::Individual,
            Mode::Joint => SolveMode::Joint,
            Mode::Mixture => SolveMode::Mixture,
        }
    }
}

#[derive(clap::Args)]
struct SolveArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    /// Instance JSON file, or `benchmark` for the built-in instance.
    #[arg(long)]
    instance: String,
    /// KL radius shared by every ball.
    #[arg(long, required_unless_present = "sweep")]
    radius: Option<f64>,
    /// Comma-separated radii; overrides --radius.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<f64>>,
    /// Output directory for the CSV and the JSON manifest.
    #[arg(long)]
    out: PathBuf,
    /// Transition kernel `[s][a][s']` replacing the instance's.
    #[arg(long)]
    kernel: Option<PathBuf>,
    /// Confidence replacing every individual and joint level.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Threshold replacing every constraint threshold.
    #[arg(long)]
    xi: Option<f64>,
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn exit_code(err: &Error) -> u8 {
    match PointStatus::of_error(err) {
        PointStatus::Infeasible => EXIT_INFEASIBLE,
        PointStatus::Numerical => EXIT_NUMERICAL,
        _ => EXIT_BAD_INPUT,
    }
}

fn load(args: &SolveArgs) -> Result<(Problem, RunConfig), Error> {
    let mut problem = if args.instance == BUILTIN_BENCHMARK && !Path::new(&args.instance).exists() {
        build_benchmark()?
    } else {
        load_problem(Path::new(&args.instance))?
    };
    if let Some(k) = &args.kernel {
        problem = problem.with_transition(load_kernel(k)?)?;
    }
    if let Some(eps) = args.epsilon {
        problem = problem.with_confidence(eps)?;
    }
    if let Some(xi) = args.xi {
        problem = problem.with_threshold(xi)?;
    }
    let config = match &args.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    Ok((problem, config))
}

fn solve(args: SolveArgs) -> ExitCode {
    let (problem, config) = match load(&args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_BAD_INPUT);
        }
    };
    let radii = args
        .sweep
        .clone()
        .unwrap_or_else(|| args.radius.into_iter().collect());
    let backend = ClarabelBackend::default();
    let manifest = run_sweep(
        &problem,
        args.mode.into(),
        &radii,
        &config,
        Execution::default(),
        &backend,
    );
    for p in &manifest.points {
        match (&p.objective, &p.error) {
            (Some(v), _) => println!(
                "radius {:<10} {:<10} objective {v:.6}",
                p.radius,
                p.status.as_str()
            ),
            (None, Some(e)) => println!("radius {:<10} {:<10} {e}", p.radius, p.status.as_str()),
            (None, None) => println!("radius {:<10} {}", p.radius, p.status.as_str()),
        }
    }
    if let Err(e) = write_artifacts(&manifest, &args.out) {
        eprintln!(
            "error: cannot write artifacts to {}: {e}",
            args.out.display()
        );
        return ExitCode::from(EXIT_BAD_INPUT);
    }
    log::info!(
        "wrote {} and {} to {}",
        CSV_NAME,
        MANIFEST_NAME,
        args.out.display()
    );
    match manifest.first_failure().map(|p| p.status) {
        None | Some(PointStatus::Solved) => ExitCode::SUCCESS,
        Some(PointStatus::Infeasible) => ExitCode::from(EXIT_INFEASIBLE),
        Some(PointStatus::Numerical) => ExitCode::from(EXIT_NUMERICAL),
        Some(PointStatus::InvalidInput) => ExitCode::from(EXIT_BAD_INPUT),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DRCCMDP_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_BAD_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.command {
        Command::Solve(args) => solve(args),
        Command::Benchmark { out } => {
            match build_benchmark().and_then(|p| save_problem(&p, &out)) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(exit_code(&e))
                }
            }
        }
    }
}
