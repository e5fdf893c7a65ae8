use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use dedt::harness::commands::{run, Command};
use dedt::harness::config::ExperimentConfig;
use dedt::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    GenData,
    TrainDm,
    EvalNmse,
    CollectExpert,
    TrainDt,
    Finetune,
    Rollout,
    TrainPpo,
    EvalRate,
    Plot,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::GenData => Command::GenData,
            Cmd::TrainDm => Command::TrainDm,
            Cmd::EvalNmse => Command::EvalNmse,
            Cmd::CollectExpert => Command::CollectExpert,
            Cmd::TrainDt => Command::TrainDt,
            Cmd::Finetune => Command::Finetune,
            Cmd::Rollout => Command::Rollout,
            Cmd::TrainPpo => Command::TrainPpo,
            Cmd::EvalRate => Command::EvalRate,
            Cmd::Plot => Command::Plot,
        }
    }
}

/// RIS beamforming workbench: channel data, diffusion imputation,
/// decision-transformer policy and baselines.
#[derive(Debug, Parser)]
#[command(name = "dedt", version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key=value`, applied after the config file. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for kv in &cli.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.sync_shapes();
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match run(cli.command.into(), &cfg) {
        Ok(manifest) => {
            log::info!("wrote {}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
