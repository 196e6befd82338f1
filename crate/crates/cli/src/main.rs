//! `flowad`: train, score, evaluate, invert and benchmark normalizing-flow
//! anomaly detectors from the command line.

mod commands;
mod config;
mod data;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flowad_core::synth::SynthConfig;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "flowad", version, about = "Normalizing-flow anomaly detection on feature maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one flow per feature scale.
    Train(Common),
    /// Write anomaly maps, heatmaps and image scores.
    Score {
        #[command(flatten)]
        common: Common,
        /// Image file (toy checkpoints) or dataset image id (feature checkpoints).
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        /// Dataset split to score without --input: train, test or all.
        #[arg(long)]
        split: Option<String>,
    },
    /// Image- and pixel-level AUROC on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// A scores.jsonl from `score`; maps are read from its sibling maps/.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Perturb the latent of one image and map it back to feature space.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        image_id: Option<String>,
        #[arg(long)]
        scale: Option<String>,
        /// Latent cell as `h,w`; defaults to the center.
        #[arg(long)]
        at: Option<String>,
        #[arg(long)]
        magnitude: Option<String>,
        /// Chebyshev radius of the perturbed patch, in cells.
        #[arg(long)]
        radius: Option<String>,
    },
    /// Time flow forward passes plus scoring.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        repetitions: Option<String>,
    },
    /// Write a synthetic texture dataset as an image folder.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
        #[arg(long, default_value_t = 60)]
        n_train: usize,
        #[arg(long, default_value_t = 20)]
        n_test_good: usize,
        #[arg(long, default_value_t = 20)]
        n_test_defect: usize,
    },
}

/// Flags shared by every run command; they override the config file.
#[derive(Args)]
struct Common {
    /// Sectioned `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    checkpoint: Option<String>,
    /// Parent directory for run directories.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Coupling steps per flow.
    #[arg(short = 'K', long)]
    steps: Option<String>,
    /// Subnet kernel schedule: 3-1 or 3-3.
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    hidden_ratio: Option<String>,
    #[arg(long)]
    clamp: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    /// on or off.
    #[arg(long)]
    augment: Option<String>,
    /// max, topk or topk:<percent>.
    #[arg(long)]
    score_agg: Option<String>,
    #[arg(long)]
    threads: Option<String>,
    #[arg(long)]
    image_size: Option<String>,
    #[arg(long)]
    category: Option<String>,
}

impl Common {
    fn resolve(self, extra: &[(&str, &str, Option<String>)]) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.load_file(path)?;
        }
        let flags = [
            ("run", "dataset", self.dataset),
            ("run", "checkpoint", self.checkpoint),
            ("run", "out", self.out),
            ("run", "seed", self.seed),
            ("run", "threads", self.threads),
            ("flow", "steps", self.steps),
            ("flow", "schedule", self.schedule),
            ("flow", "hidden_ratio", self.hidden_ratio),
            ("flow", "clamp", self.clamp),
            ("train", "epochs", self.epochs),
            ("train", "batch_size", self.batch_size),
            ("train", "lr", self.lr),
            ("train", "weight_decay", self.weight_decay),
            ("train", "augment", self.augment),
            ("score", "aggregation", self.score_agg),
            ("data", "image_size", self.image_size),
            ("data", "category", self.category),
        ];
        for (section, key, value) in flags.iter().chain(extra) {
            if let Some(v) = value {
                cfg.set(section, key, v).map_err(CliError::usage)?;
            }
        }
        cfg.validate()?;
        if cfg.threads > 1 {
            eprintln!("note: running single-threaded (requested {} threads)", cfg.threads);
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> CliResult<Option<PathBuf>> {
    let run = match cli.command {
        Command::Train(common) => commands::train(&common.resolve(&[])?)?,
        Command::Score { common, inputs, split } => {
            let cfg = common.resolve(&[("score", "split", split)])?;
            commands::score(&cfg, &inputs)?
        }
        Command::Eval { common, scores } => commands::eval(&common.resolve(&[])?, scores.as_deref())?,
        Command::Generate {
            common,
            image_id,
            scale,
            at,
            magnitude,
            radius,
        } => {
            let cfg = common.resolve(&[
                ("generate", "image_id", image_id),
                ("generate", "scale", scale),
                ("generate", "at", at),
                ("generate", "magnitude", magnitude),
                ("generate", "radius", radius),
            ])?;
            commands::generate(&cfg)?
        }
        Command::Bench { common, repetitions } => {
            commands::bench(&common.resolve(&[("bench", "repetitions", repetitions)])?)?
        }
        Command::Synth {
            out,
            seed,
            image_size,
            n_train,
            n_test_good,
            n_test_defect,
        } => {
            let cfg = SynthConfig {
                size: image_size,
                n_train,
                n_test_good,
                n_test_defect,
                seed,
                ..SynthConfig::default()
            };
            commands::synth(&out, &cfg)?;
            return Ok(None);
        }
    };
    Ok(Some(run.dir))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(dir) => {
            if let Some(dir) = dir {
                println!("run: {}", dir.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
