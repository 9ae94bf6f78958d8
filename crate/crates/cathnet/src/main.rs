use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use cathnet::ablate::{ablate, Axis};
use cathnet::checkpoint::Checkpoint;
use cathnet::config::RunConfig;
use cathnet::dataset::{gen_data, read_split, Split};
use cathnet::evaluate::{evaluate_model, evaluate_oracle};
use cathnet::report::{write_report, ReportJson};
use cathnet::train;
use cathnet_core::model::Network;
use cathnet_core::synth::GeneratorConfig;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cathnet", version, about = "Multi-task electrode detection and catheter segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a TOML run config
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint written by the same config
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset split
    Eval {
        /// Checkpoint to score; optional with --oracle
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Directory for report.json and per_sample.csv
        #[arg(long)]
        out: Option<PathBuf>,
        /// Score the ground truth itself (upper bound check)
        #[arg(long)]
        oracle: bool,
    },
    /// Write a synthetic dataset
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Generator settings (the [data.generator] table of a run config)
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Train every variant along one axis and tabulate the results
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// strategy, task_weight, kpi_metric or backbone_scale
        #[arg(long)]
        axis: Axis,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train { config, resume } => {
            let cfg = RunConfig::load(&config)?;
            let outcome = train(cfg, resume.as_deref())?;
            let r = ReportJson::new(&outcome.report, "test", outcome.logs.last().map_or(0, |l| l.iteration));
            println!("{}", serde_json::to_string_pretty(&r)?);
            println!("artifacts in {}", outcome.output_dir.display());
        }
        Command::Eval { ckpt, data, split, out, oracle } => {
            let split: Split = split.parse()?;
            let records = read_split(&data, split)?;
            let report = if oracle {
                evaluate_oracle(&records, &Default::default())?
            } else {
                let Some(path) = ckpt else { bail!("--ckpt is required unless --oracle is given") };
                let ck = Checkpoint::load(&path)?;
                let (network, _) = Network::new(ck.config.model.clone(), 0)?;
                evaluate_model(&network, &ck.params, &records, &ck.config.eval.decode, ck.config.optim.batch_size)?
            };
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                write_report(&dir, &report, split.name(), 0)?;
            }
            println!("{}", serde_json::to_string_pretty(&ReportJson::new(&report, split.name(), 0))?);
        }
        Command::GenData { out, n, seed, config, force } => {
            if n == 0 {
                bail!("--n must be at least 1");
            }
            let gen = match config {
                Some(p) => RunConfig::load(&p)?.data.generator,
                None => GeneratorConfig::default(),
            };
            let m = gen_data(&out, n, seed, &gen, force)?;
            println!("wrote {} samples of {}x{} to {}", m.count, m.size, m.size, out.display());
        }
        Command::Ablate { config, axis } => {
            let cfg = RunConfig::load(&config)?;
            println!("{}", ablate(&cfg, axis)?);
        }
    }
    Ok(())
}
