//! `srct` command-line front end.
//!
//! Exit codes: 0 on success, 2 on configuration or usage errors, 3 when
//! `verify` finds an invariant violation, 1 on any other failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use srct::experiments::analysis::{constants_report, equilibrium_record, Solver};
use srct::experiments::io::{write_alignment, write_study_a, write_study_b, ArtifactDir, Format};
use srct::experiments::{alignment, study_a, study_b, verify, Config, Method};
use srct::par::{configure_threads, Execution};
use srct::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Star,
    Grpo,
    Dpo,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Star => Method::Star,
            MethodArg::Grpo => Method::Grpo,
            MethodArg::Dpo => Method::Dpo,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StudyArg {
    A,
    B,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SolverArg {
    Dpo,
    Grpo,
    Dcr,
}

impl From<SolverArg> for Solver {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Dpo => Solver::Dpo,
            SolverArg::Grpo => Solver::Grpo,
            SolverArg::Dcr => Solver::Dcr,
        }
    }
}

/// Replicator-flow laboratory for correctness-trained policies.
#[derive(Debug, Parser)]
#[command(name = "srct", version, about)]
struct Cli {
    /// TOML configuration file (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory of the study.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated seeds overriding the configuration.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads (1 runs everything on the calling thread).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Table format.
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: FormatArg,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Study A trajectories for selected methods.
    Simulate {
        /// Methods to run (default: those in the configuration).
        #[arg(long, value_enum, value_delimiter = ',')]
        method: Vec<MethodArg>,
        /// Single seed (shorthand for --seeds).
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Full Study A or the Study B grid with ablations.
    Sweep {
        #[arg(long, value_enum)]
        study: StudyArg,
        /// Override the number of steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Replicator versus procedural alignment diagnostics.
    Align {
        #[arg(long, value_enum, value_delimiter = ',')]
        method: Vec<MethodArg>,
        /// Override the number of steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Two-level and DCR equilibria.
    Equilibrium {
        #[arg(long, value_enum, value_delimiter = ',', default_value = "dpo,grpo,dcr")]
        solver: Vec<SolverArg>,
        /// Entropy weight for the two-level solvers.
        #[arg(long, default_value_t = 1.0)]
        eps: f64,
        /// Correct traces (default: the configured universe).
        #[arg(long)]
        m: Option<usize>,
        /// Incorrect traces (default: the configured universe).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Closed-form constants for a trimmed simplex.
    Constants {
        #[arg(long)]
        delta: f64,
        #[arg(long = "S")]
        size: usize,
        /// Number of correct traces.
        #[arg(long)]
        correct: Option<usize>,
    },
    /// Runs the invariant suite (exit code 3 on violation).
    Verify {
        /// Artifact directory to re-parse and validate.
        #[arg(long)]
        artifacts: Option<PathBuf>,
    },
}

enum Failure {
    Error(Error),
    Invariant,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn load_config(cli: &Cli) -> Result<Config, Error> {
    let mut cfg = match &cli.config {
        Some(path) => Config::from_path(path)?,
        None => Config::default(),
    };
    if let Some(seeds) = &cli.seeds {
        cfg.seeds = seeds.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn set_steps(cfg: &mut Config, steps: Option<usize>) {
    if let Some(s) = steps {
        cfg.flow.steps = s;
    }
}

fn out_dir(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| Path::new("runs").join(default))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load_config(&cli)?;
    let exec = match cli.threads {
        Some(0) => return Err(Error::Config("--threads must be at least 1".into()).into()),
        Some(1) => Execution::Sequential,
        Some(n) => {
            configure_threads(n);
            Execution::Parallel
        }
        None => Execution::Parallel,
    };
    let format: Format = cli.format.into();
    match &cli.command {
        Command::Simulate { method, seed, steps } => {
            if let Some(s) = seed {
                cfg.seeds = vec![*s];
            }
            if !method.is_empty() {
                cfg.study_a.methods = method.iter().map(|&m| m.into()).collect();
            }
            set_steps(&mut cfg, *steps);
            cfg.validate()?;
            let runs = study_a::run_study_a(&cfg, exec)?;
            let dir = out_dir(&cli, "simulate");
            write_study_a(&dir, &cfg, &runs, format)?;
            println!("wrote {} runs to {}", runs.len(), dir.display());
        }
        Command::Sweep { study, steps } => {
            set_steps(&mut cfg, *steps);
            cfg.validate()?;
            match study {
                StudyArg::A => {
                    let runs = study_a::run_study_a(&cfg, exec)?;
                    let dir = out_dir(&cli, "study_a");
                    write_study_a(&dir, &cfg, &runs, format)?;
                    println!("wrote {} runs to {}", runs.len(), dir.display());
                }
                StudyArg::B => {
                    let result = study_b::run_study_b(&cfg, exec)?;
                    let dir = out_dir(&cli, "study_b");
                    write_study_b(&dir, &cfg, &result, format)?;
                    println!("wrote {} phase rows to {}", result.phase.len(), dir.display());
                }
            }
        }
        Command::Align { method, steps } => {
            if !method.is_empty() {
                cfg.alignment.methods = method.iter().map(|&m| m.into()).collect();
            }
            set_steps(&mut cfg, *steps);
            cfg.validate()?;
            let runs = alignment::run_alignment(&cfg, exec)?;
            let dir = out_dir(&cli, "alignment");
            write_alignment(&dir, &cfg, &runs, format)?;
            println!("wrote {} alignment runs to {}", runs.len(), dir.display());
        }
        Command::Equilibrium { solver, eps, m, n } => {
            let m = m.unwrap_or(cfg.universe.cluster_sizes.iter().sum());
            let n = n.unwrap_or(cfg.universe.n_incorrect);
            let records = solver
                .iter()
                .map(|&s| equilibrium_record(&cfg, s.into(), *eps, m, n))
                .collect::<Result<Vec<_>, _>>()?;
            println!("{}", serde_json::to_string_pretty(&records).map_err(Error::from)?);
            let dir = out_dir(&cli, "equilibrium");
            let mut art = ArtifactDir::new(&dir, format)?;
            art.json("equilibria.json", &records)?;
            art.finish("equilibrium", &cfg)?;
        }
        Command::Constants { delta, size, correct } => {
            // The inputs come straight from the command line, so a domain
            // error here is a usage error.
            let report = constants_report(&cfg, *size, *delta, *correct).map_err(|e| match e {
                Error::Domain { .. } => Error::Config(e.to_string()),
                other => other,
            })?;
            match format {
                Format::Csv => print!("{}", report.to_text()),
                Format::Json => println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?),
            }
        }
        Command::Verify { artifacts } => {
            let report = verify::run_verify(&cfg, artifacts.as_deref())?;
            match format {
                Format::Csv => print!("{}", report.to_text()),
                Format::Json => println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?),
            }
            if !report.passed() {
                return Err(Failure::Invariant);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invariant) => {
            eprintln!("error: invariant violation");
            ExitCode::from(3)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
