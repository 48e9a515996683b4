use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use fairmarl::harness::{run_experiment, solve_oracle, sweep_configs, ExperimentConfig, SweepParam};

#[derive(Parser)]
#[command(name = "fairmarl", version, about = "Fair multi-agent RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Param {
    Agents,
    Horizon,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its CSV/JSON outputs.
    Run {
        config: PathBuf,
        /// Output directory; overrides the config's `output`.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run the experiment once per value of a parameter.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        param: Param,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// Solve the true model's occupancy program and print the optimum.
    Oracle { config: PathBuf },
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_path(path).with_context(|| format!("config {}", path.display()))
}

fn output_dir(cfg: &ExperimentConfig, flag: Option<PathBuf>) -> Result<PathBuf> {
    match flag.or_else(|| cfg.output.clone()) {
        Some(dir) => Ok(dir),
        None => bail!("no output directory: pass --output or set `output` in the config"),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, output } => {
            let cfg = load(&config)?;
            let dir = output_dir(&cfg, output)?;
            let report = run_experiment(&cfg)?;
            report.write(&dir)?;
            println!(
                "{} on {} seeds: median final f_T = {} -> {}",
                cfg.algorithm.name(),
                cfg.seeds.len(),
                report.median_final(),
                dir.display()
            );
        }
        Command::Sweep {
            config,
            param,
            values,
            output,
        } => {
            let mut base = load(&config)?;
            base.output = Some(output_dir(&base, output)?);
            let param = match param {
                Param::Agents => SweepParam::Agents,
                Param::Horizon => SweepParam::Horizon,
            };
            for cfg in sweep_configs(&base, param, &values)? {
                let dir = cfg.output.clone().expect("sweep sets an output directory");
                let report = run_experiment(&cfg)?;
                report.write(&dir)?;
                println!("{}: median final f_T = {}", dir.display(), report.median_final());
            }
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            println!("ok: {} with {} seeds", cfg.algorithm.name(), cfg.seeds.len());
        }
        Command::Oracle { config } => {
            let cfg = load(&config)?;
            match solve_oracle(&cfg)? {
                Some(point) => println!("{}", serde_json::to_string_pretty(&point)?),
                None => bail!("the configured environment has no exact model"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
