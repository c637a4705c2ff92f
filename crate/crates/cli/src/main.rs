use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use ris_gnn_cli::{cmd_eval, cmd_sweep, cmd_train, configure_threads, parse_value, ExperimentConfig, Result, SweepAxis};

#[derive(Parser)]
#[command(name = "ris-gnn", version, about = "Train and evaluate the RIS beamforming GNN against baselines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the file.
    #[arg(long)]
    seed: Option<u64>,
    /// `key=value`, where key is an alias (K, J, epochs, lr, ...) or a dotted path.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; defaults to `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, then evaluate it next to the configured baselines.
    Train(Common),
    /// Evaluate a checkpoint and the baselines on the same fresh drops.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of evaluation drops.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Evaluate the baselines only.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Evaluate along one configuration axis without retraining.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// `key=v1,v2,...`, replacing the axis of the config.
        #[arg(long)]
        axis: Option<String>,
        #[arg(long)]
        samples: Option<usize>,
    },
}

fn load(common: &Common, samples: Option<usize>) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&common.config)?.with_overrides(&common.overrides)?;
    let seed = common.seed.unwrap_or(cfg.seed);
    cfg = cfg.with_seed(seed);
    if let Some(n) = samples {
        cfg.eval_samples = n;
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));
    cfg.validate()?;
    Ok((cfg, out))
}

fn parse_axis(spec: &str) -> Result<SweepAxis> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| ris_gnn_cli::CliError::Config(format!("axis '{spec}' is not of the form key=v1,v2,...")))?;
    Ok(SweepAxis {
        key: key.trim().to_string(),
        values: values.split(',').map(|v| parse_value(v.trim())).collect::<Vec<Value>>(),
    })
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let args: Vec<String> = std::env::args().collect();
    match cli.command {
        Command::Train(common) => {
            let (cfg, out) = load(&common, None)?;
            let art = cmd_train(&cfg, &out, args)?;
            for m in &art.summary.methods {
                println!("{:<14} {:.4} ± {:.4} (n={})", m.method, m.summary.mean, m.summary.std, m.summary.n);
            }
            println!("checkpoint: {}", art.checkpoint.display());
        }
        Command::Eval { common, checkpoint, samples } => {
            let (cfg, out) = load(&common, samples)?;
            let summary = cmd_eval(&cfg, Some(&checkpoint), &out, args)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Baseline { common, samples } => {
            let (cfg, out) = load(&common, samples)?;
            let summary = cmd_eval(&cfg, None, &out, args)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Sweep {
            common,
            checkpoint,
            axis,
            samples,
        } => {
            let (mut cfg, out) = load(&common, samples)?;
            if let Some(spec) = axis {
                cfg.sweep = Some(parse_axis(&spec)?);
            }
            let rows = cmd_sweep(&cfg, checkpoint.as_deref(), &out, args)?;
            for r in rows {
                println!("{}={} {:<14} {:.4} ± {:.4} (n={})", r.axis, r.value, r.method, r.mean, r.std, r.n);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
