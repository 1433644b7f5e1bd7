use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use config::{parse_grid, read_config, CliOverrides, ConfigError};

#[derive(Parser, Debug)]
#[command(name = "roughpde", version, about = "Experiments for quasilinear parabolic equations with rough forcing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Grid as N1xN2.
    #[arg(long, global = true, value_parser = parse_grid)]
    grid: Option<roughpde::grid::GridSpec>,
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Artifact directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dotted `key=value` assignment applied to the configuration; repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Sample noise, write the field and spectrum statistics.
    SampleNoise,
    /// Moment scaling suites for the noise and the renormalized commutators.
    VerifyScaling,
    /// Renormalization constants and the convergence verdict.
    RenormTable,
    /// One quasilinear solve.
    Solve,
    /// Cauchy study in the regularization, with and without renormalization.
    EpsSweep,
    /// Amplitude scaling of the solution and of its modelledness constant.
    EtaSweep,
    /// Agreement with an independent classical solver on smooth forcing.
    ClassicalCheck,
    /// Every subcommand in turn.
    All,
}

fn run(cli: &Cli) -> anyhow::Result<commands::Outcome> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| ConfigError("--config: required".into()))?;
    let overrides = CliOverrides {
        seed: cli.seed,
        grid: cli.grid,
        samples: cli.samples,
        out: cli.out.clone(),
        assignments: cli.overrides.clone(),
    };
    let cfg = read_config(path, &overrides)?;
    match cli.command {
        Command::SampleNoise => commands::sample_noise_cmd(&cfg),
        Command::VerifyScaling => commands::verify_scaling(&cfg),
        Command::RenormTable => commands::renorm_table(&cfg),
        Command::Solve => commands::solve(&cfg),
        Command::EpsSweep => commands::eps_sweep(&cfg),
        Command::EtaSweep => commands::eta_sweep(&cfg),
        Command::ClassicalCheck => commands::classical_check_cmd(&cfg),
        Command::All => commands::all(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            println!("{}", out.summary);
            for a in &out.artifacts {
                println!("wrote {}", a.display());
            }
            if out.pass == Some(false) {
                println!("FAIL");
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            // config errors print bare, so the first line is the pointered message
            match e.downcast_ref::<ConfigError>() {
                Some(c) => eprintln!("{c}"),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::from(2)
        }
    }
}
