//! `wgdirac`: design, simulate and analyse modulated waveguide lattices.

mod check;
mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use waveguide_dirac::ab_pipeline::ABConfig;
use waveguide_dirac::Error;

use config::{CheckConfig, DesignConfig, DiracConfig, FitConfig, SimulateConfig};
use output::OutputDir;

#[derive(Parser)]
#[command(name = "wgdirac", version, about = "Dirac dynamics on modulated waveguide lattices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed for randomized states and property checks.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads. Computation is serial; the value is recorded in the manifest.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Compile a geometry into modulation channels and effective couplings.
    Design,
    /// Evolve waveguide amplitudes with the full or averaged coupled-mode equations.
    Simulate,
    /// Evolve a spinor with the discretized Dirac equation directly.
    Dirac,
    /// Run the conical-defect interference experiment and fit the deficit.
    Ab,
    /// Fit the deficit parameter to an existing density table.
    Fit,
    /// Run the stencil, norm, averaging and holonomy suites.
    Check,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Design => "design",
            Command::Simulate => "simulate",
            Command::Dirac => "dirac",
            Command::Ab => "ab",
            Command::Fit => "fit",
            Command::Check => "check",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Lib(Error),
    Config(String),
    MissingFile(PathBuf),
    Io(String),
    CheckFailed(Vec<&'static str>),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::MissingFile(_) => 3,
            CliError::Lib(Error::Divergence(_)) => 4,
            CliError::Lib(_) | CliError::Config(_) => 2,
            CliError::Io(_) | CliError::CheckFailed(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::MissingFile(p) => write!(f, "file not found: {}", p.display()),
            CliError::Io(m) => write!(f, "{m}"),
            CliError::CheckFailed(s) => write!(f, "failed suites: {}", s.join(", ")),
        }
    }
}

/// Run-wide settings shared by the commands.
pub struct Context {
    pub seed: u64,
    pub config_dir: Option<PathBuf>,
}

fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else { return Ok(T::default()) };
    if !path.is_file() {
        return Err(CliError::MissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn echo<T: Serialize>(cfg: &T) -> serde_json::Value {
    serde_json::to_value(cfg).expect("configs serialize to JSON")
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let ctx = Context {
        seed: cli.seed,
        config_dir: cli.config.as_ref().and_then(|p| p.parent()).map(Path::to_path_buf),
    };
    if cli.threads == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    let ctx = &ctx;
    let cfg_path = cli.config.as_deref();
    // parse and validate everything before creating any output
    let (echoed, action): (serde_json::Value, Box<dyn FnOnce(&mut OutputDir) -> Result<(), CliError>>) = match cli.command {
        Command::Design => {
            let c: DesignConfig = load(cfg_path)?;
            (echo(&c), Box::new(move |out| commands::design(&c, out)))
        }
        Command::Simulate => {
            let c: SimulateConfig = load(cfg_path)?;
            c.integrator.validate()?;
            (echo(&c), Box::new(move |out| commands::simulate(ctx, &c, out)))
        }
        Command::Dirac => {
            let c: DiracConfig = load(cfg_path)?;
            c.integrator.validate()?;
            c.geometry.validate()?;
            (echo(&c), Box::new(move |out| commands::dirac(ctx, &c, out)))
        }
        Command::Ab => {
            let c: ABConfig = load(cfg_path)?;
            c.validate()?;
            (echo(&c), Box::new(move |out| commands::ab(&c, out)))
        }
        Command::Fit => {
            let c: FitConfig = load(cfg_path)?;
            c.experiment.validate()?;
            (echo(&c), Box::new(move |out| commands::fit(ctx, &c, out)))
        }
        Command::Check => {
            let c: CheckConfig = load(cfg_path)?;
            let seed = cli.seed;
            (
                echo(&c),
                Box::new(move |out| {
                    let results = check::run(&c, seed)?;
                    for r in &results {
                        let values: Vec<String> = r.measurements.iter().map(|(k, v)| format!("{k} = {v:.3e}")).collect();
                        println!("{:<10} {}  {}", r.suite, if r.passed { "PASS" } else { "FAIL" }, values.join(", "));
                    }
                    out.write_json("check.json", &results)?;
                    let failed: Vec<&'static str> = results.iter().filter(|r| !r.passed).map(|r| r.suite).collect();
                    if failed.is_empty() { Ok(()) } else { Err(CliError::CheckFailed(failed)) }
                }),
            )
        }
    };
    let mut out = OutputDir::create(&cli.out)?;
    let result = action(&mut out);
    // a failed check still leaves its report behind
    if matches!(result, Ok(()) | Err(CliError::CheckFailed(_))) {
        out.finish(cli.command.name(), cli.seed, cli.threads, &echoed)?;
    }
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
