//! Command-line front end: configuration, file formats and the pipeline.

pub mod config;
pub mod io;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use config::ExperimentConfig;
use pipeline::{resolve_out_dir, ReproduceConfig, Target};

#[derive(Debug, Parser)]
#[command(name = "igpk", version, about = "Gaussian-process Koopman models and eDMD baselines")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Global seed; overrides the configured one.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate trajectories and write train/test datasets.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train the configured model on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory (as written by `generate`).
        #[arg(long)]
        data: PathBuf,
    },
    /// Roll a trained model out on the test split and write metrics.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Rerun a published table or figure: table1, table2, fig2 or fig3.
    Reproduce {
        #[command(flatten)]
        common: Common,
        target: String,
    },
}

fn experiment(common: &Common) -> Result<ExperimentConfig> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("--config is required for this command".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Runs one parsed command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common } => {
            let cfg = experiment(&common)?;
            let out = resolve_out_dir(common.out.as_deref(), cfg.output_dir.as_deref());
            pipeline::cmd_generate(&cfg, &out)?;
            eprintln!("wrote datasets to {}", out.display());
        }
        Command::Train { common, data } => {
            let cfg = experiment(&common)?;
            let out = resolve_out_dir(common.out.as_deref(), cfg.output_dir.as_deref());
            let pool = rayon::ThreadPoolBuilder::new().num_threads(common.jobs.max(1)).build();
            let model = match pool {
                Ok(p) => p.install(|| pipeline::cmd_train(&cfg, &data, &out))?,
                Err(e) => return Err(Error::InvalidConfig(format!("cannot start workers: {e}"))),
            };
            eprintln!("trained {} (n_z = {}) into {}", cfg.model.name(), model.n_z(), out.display());
        }
        Command::Evaluate { common, model, data } => {
            let cfg = experiment(&common)?;
            let out = resolve_out_dir(common.out.as_deref(), cfg.output_dir.as_deref());
            let s = pipeline::cmd_evaluate(&cfg, &model, &data, &out)?;
            match s.nlpd_mean {
                Some(nl) => eprintln!("NRMSE {:.3} ± {:.3} %, NLPD {nl:.3}", s.nrmse_mean, s.nrmse_std),
                None => eprintln!("NRMSE {:.3} ± {:.3} %", s.nrmse_mean, s.nrmse_std),
            }
        }
        Command::Reproduce { common, target } => {
            let target: Target = target.parse()?;
            let over = match &common.config {
                Some(p) => ReproduceConfig::load(p)?,
                None => ReproduceConfig::default(),
            };
            let out = resolve_out_dir(common.out.as_deref(), None);
            let results = pipeline::cmd_reproduce(target, common.seed.unwrap_or(0), &out, common.jobs, &over)?;
            for r in &results {
                let s = &r.summary;
                eprintln!(
                    "{:<12} {:<10} NRMSE {:>8.3} ± {:<8.3}{}",
                    r.scenario,
                    r.label.model,
                    s.nrmse_mean,
                    s.nrmse_std,
                    s.nlpd_mean.map_or(String::new(), |m| format!(" NLPD {m:.3} ± {:.3}", s.nlpd_std.unwrap_or(f64::NAN)))
                );
            }
        }
    }
    Ok(())
}
