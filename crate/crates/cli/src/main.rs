use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use drlab::DrError;

mod commands;
mod config;
mod selftest;

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "drlab", version, about = "Exact and high-precision runs of X' = (X_1 + ... + X_m - 1)^+")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: $DRLAB_OUT_ROOT/<command>, else drlab-out/<command>)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Switches the run to bigfloat mode at this many bits
    #[arg(long, global = true)]
    precision: Option<u32>,
    /// Truncation tolerance, e.g. 1e-30 or 1/1000
    #[arg(long, global = true)]
    tol: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Run a trajectory; writes trace.csv and a snapshot
    Evolve,
    /// Classify the initial law
    Classify,
    /// Critical point of a (1-p) delta_0 + p Y0 family
    Pc,
    /// Free-energy brackets for n = 0..steps
    FreeEnergy,
    /// Fit the essential singularity above p_c
    ScanK,
    /// Conjecture series and verdicts along a critical run
    Conjectures,
    /// Monte Carlo estimates of P(X_n != 0) and E(X_n)
    Mc,
    /// Quick check of every module
    Selftest,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Evolve => "evolve",
            Command::Classify => "classify",
            Command::Pc => "pc",
            Command::FreeEnergy => "free-energy",
            Command::ScanK => "scan-k",
            Command::Conjectures => "conjectures",
            Command::Mc => "mc",
            Command::Selftest => "selftest",
        }
    }
}

fn exit_code(e: &DrError) -> u8 {
    match e {
        DrError::Config(_) | DrError::Domain(_) | DrError::Load(_) | DrError::Undefined(_) => 2,
        DrError::Integrity(_) => 3,
        DrError::Resource(_) => 4,
        DrError::Io(_) => 1,
    }
}

fn run(cli: &Cli) -> drlab::Result<bool> {
    let ov = Overrides {
        out: cli.out.clone(),
        steps: cli.steps,
        precision: cli.precision,
        tol: cli.tol.clone(),
        seed: cli.seed,
    };
    if let Command::Selftest = cli.command {
        let results = selftest::run();
        let passed = results.iter().all(|r| r.passed);
        if let Some(dir) = &cli.out {
            let text = serde_json::to_string_pretty(&results).map_err(|e| DrError::Config(e.to_string()))?;
            commands::write_atomic(dir, "selftest.json", text.as_bytes())?;
        }
        println!("{}", if passed { "selftest passed" } else { "selftest FAILED" });
        return Ok(passed);
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| DrError::Config(format!("{} needs --config PATH", cli.command.name())))?;
    let mut raw = config::load(path)?;
    if cli.precision.is_some() {
        raw.mode = "bigfloat".into();
    }
    let cfg: RunConfig = raw.resolve(&ov, cli.command.name())?;
    commands::write_resolved(&cfg)?;
    match cli.command {
        Command::Evolve => commands::evolve(&cfg)?,
        Command::Classify => commands::classify(&cfg)?,
        Command::Pc => commands::pc(&cfg)?,
        Command::FreeEnergy => commands::free_energy(&cfg)?,
        Command::ScanK => commands::scan_k(&cfg)?,
        Command::Conjectures => commands::conjectures(&cfg)?,
        Command::Mc => commands::mc(&cfg)?,
        Command::Selftest => unreachable!("handled above"),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("drlab: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
