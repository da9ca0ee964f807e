use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use plasticity::runner::{self, ExperimentConfig, RunOptions};
use plasticity::tasks::mnist;

#[derive(Parser)]
#[command(
    name = "plasticity",
    about = "Continual-learning experiment suite: replay-augmented learners vs. baselines on regression, classification, and policy evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment configuration and write CSV + SVG outputs.
    Run {
        /// Path to a JSON experiment config (see configs/).
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seed override, e.g. 0,1,2.
        #[arg(long)]
        seeds: Option<String>,
        /// Desk-scale factor: divides the task count K.
        #[arg(long)]
        scale: Option<usize>,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for parameter checkpoints (periodic saves additionally
        /// need checkpoint_every_tasks in the config; a final snapshot is
        /// always written when this flag is set).
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Re-render SVG charts from the CSV files in a directory.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Download and validate the MNIST IDX files.
    FetchMnist {
        #[arg(long, default_value = "data")]
        dir: PathBuf,
        /// Mirror base URL holding the four canonical .gz files.
        #[arg(long, default_value = mnist::DEFAULT_MIRROR)]
        url: String,
        /// Optional comma-separated expected SHA-256 digests in file order:
        /// train images, train labels, test images, test labels.
        #[arg(long)]
        sha256: Option<String>,
    },
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, String> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| format!("bad seed '{s}'"))
        })
        .collect()
}

fn run() -> Result<(), String> {
    match Cli::parse().command {
        Command::Run {
            config,
            seeds,
            scale,
            out,
            checkpoints,
        } => {
            let mut cfg = ExperimentConfig::load(&config).map_err(|e| e.to_string())?;
            if let Some(seeds) = seeds {
                cfg.seeds = parse_seeds(&seeds)?;
            }
            if let Some(scale) = scale {
                cfg.apply_scale(scale).map_err(|e| e.to_string())?;
            }
            if let Some(out) = out {
                cfg.out_dir = out.to_string_lossy().into_owned();
            }
            cfg.validate().map_err(|e| e.to_string())?;
            eprintln!(
                "running {}: {} model(s) x {} seed(s), {} tasks x {} steps (batch {})",
                cfg.benchmark,
                cfg.models.len(),
                cfg.seeds.len(),
                cfg.tasks,
                cfg.steps_per_task,
                cfg.batch_size
            );
            let options = RunOptions {
                checkpoint_dir: checkpoints,
                ..RunOptions::default()
            };
            let outcome = runner::execute(&cfg, &options).map_err(|e| e.to_string())?;
            for out in &outcome.outputs {
                eprintln!(
                    "  {} seed {}: {} records, data stream {}",
                    out.model,
                    out.seed,
                    out.series.values.len(),
                    &out.data_hash[..16]
                );
            }
            println!("wrote {}", outcome.csv_path.display());
            println!("wrote {}", outcome.svg_path.display());
            Ok(())
        }
        Command::Plot { input } => {
            let written = runner::replot_dir(&input).map_err(|e| e.to_string())?;
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::FetchMnist { dir, url, sha256 } => {
            let expected: Option<Vec<String>> = sha256
                .map(|s| s.split(',').map(|x| x.trim().to_string()).collect());
            let digests = mnist::fetch_mnist(&dir, &url, expected.as_deref())
                .map_err(|e| e.to_string())?;
            for (name, digest) in digests {
                println!("{digest}  {name}");
            }
            println!("ok: dataset ready in {}", dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
