//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{self, CommandError, Outcome, Run};
use crate::config::{load_config, LoadedConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "fascicle", version, about = "Homogenized nerve fascicle toolkit")]
struct Cli {
    /// Worker threads for parallel stages.
    #[arg(long, global = true, env = "FASCICLE_THREADS")]
    threads: Option<usize>,
    /// Increase log detail on standard error.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct SamplingArgs {
    /// Configuration (TOML, or a manifest to replay).
    #[arg(long = "config", visible_alias = "model")]
    config: PathBuf,
    /// Overrides `sampling.window`.
    #[arg(long)]
    window: Option<f64>,
    /// Overrides `sampling.samples`.
    #[arg(long)]
    samples: Option<usize>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long = "config", visible_alias = "model")]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ConvergenceArgs {
    #[arg(long = "config", visible_alias = "model")]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "convergence")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample one realization of the disk process.
    SampleGeometry(SamplingArgs),
    /// Estimate volume fractions and Palm masses per class.
    EstimateDensities(SamplingArgs),
    /// Check density, Palm mass and radius identities against closed forms.
    CheckIdentities(SamplingArgs),
    /// Tabulate the effective conductivity from cell problems.
    TabulateSigmaHom(RunArgs),
    /// Integrate the homogenized multidomain model.
    RunMacro(RunArgs),
    /// Compare stationary microscopic energies with their homogenized limit.
    VerifyCellConvergence(ConvergenceArgs),
    /// Parse and validate a configuration file.
    ValidateConfig {
        path: PathBuf,
    },
}

fn load_with_overrides(a: &SamplingArgs) -> Result<LoadedConfig, CommandError> {
    let mut loaded = load_config(&a.config)?;
    if let Some(w) = a.window {
        loaded.config.sampling.window = w;
    }
    if let Some(s) = a.samples {
        loaded.config.sampling.samples = s;
    }
    if let Some(s) = a.seed {
        loaded.config.seed = s;
    }
    loaded.validate()?;
    Ok(loaded)
}

fn thread_count(flag: Option<usize>, loaded: &LoadedConfig) -> usize {
    flag.or(loaded.config.threads)
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn execute(loaded: &LoadedConfig, flag: Option<usize>, f: impl FnOnce(&Run) -> Result<Outcome, CommandError> + Send) -> Result<Outcome, CommandError> {
    let threads = thread_count(flag, loaded);
    let mut resolved = loaded.clone();
    resolved.config = loaded.resolved();
    resolved.config.threads = Some(threads);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CommandError::Solver(e.to_string()))?;
    pool.install(|| f(&Run { loaded: &resolved, threads }))
}

fn dispatch(cli: Cli) -> Result<Option<Outcome>, CommandError> {
    let threads = cli.threads;
    let outcome = match cli.command {
        Command::ValidateConfig { path } => {
            load_config(&path)?;
            log::info!("{} is valid", path.display());
            return Ok(None);
        }
        Command::SampleGeometry(a) => execute(&load_with_overrides(&a)?, threads, |r| commands::sample_geometry(r, &a.out))?,
        Command::EstimateDensities(a) => execute(&load_with_overrides(&a)?, threads, |r| commands::estimate_densities(r, &a.out))?,
        Command::CheckIdentities(a) => execute(&load_with_overrides(&a)?, threads, |r| commands::check_identities(r, &a.out))?,
        Command::TabulateSigmaHom(a) => execute(&load_config(&a.config)?, threads, |r| commands::tabulate_sigma_hom(r, &a.out))?,
        Command::RunMacro(a) => execute(&load_config(&a.config)?, threads, |r| commands::run_macro(r, &a.out))?,
        Command::VerifyCellConvergence(a) => {
            execute(&load_config(&a.config)?, threads, |r| commands::verify_cell_convergence(r, &a.out))?
        }
    };
    Ok(Some(outcome))
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Only the manifest path is printed to standard output.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_env("FASCICLE_LOG").target(env_logger::Target::Stderr).try_init();
    match dispatch(cli) {
        Ok(None) => EXIT_OK,
        Ok(Some(outcome)) => {
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "{}", outcome.manifest.display());
            if outcome.passed {
                EXIT_OK
            } else {
                eprintln!("error: checks failed; see the outputs listed in {}", outcome.manifest.display());
                EXIT_VALIDATION
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
