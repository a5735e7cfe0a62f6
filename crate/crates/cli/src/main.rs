use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use bcgan_cli::commands::{cmd_eval, cmd_sample, cmd_train, SampleRequest};
use bcgan_cli::output::eval_line;

#[derive(Parser)]
#[command(name = "bcgan", version, about = "Bayesian conditional GAN: train, sample, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a `key = value` config file.
    Train { config: PathBuf },
    /// Draw samples of one class from a checkpoint's generator.
    Sample {
        checkpoint: PathBuf,
        #[arg(long = "class")]
        class: usize,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        /// Directory for samples.csv or the PGM files.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Config supplying the generator's dropout; defaults to the run's config echo.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the config's test set; prints one CSV line.
    Eval { checkpoint: PathBuf, config: PathBuf },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { config } => {
            let out = cmd_train(&config).with_context(|| format!("training from {}", config.display()))?;
            println!(
                "trained {} epochs ({} iterations); final checkpoint {}",
                out.state.epoch,
                out.state.iteration,
                out.checkpoints.last().expect("final checkpoint").display()
            );
        }
        Command::Sample {
            checkpoint,
            class,
            count,
            seed,
            out,
            config,
        } => {
            let files = cmd_sample(&SampleRequest {
                checkpoint,
                class,
                count,
                seed,
                out_dir: out,
                config,
            })
            .context("sampling")?;
            for f in files {
                println!("{}", f.display());
            }
        }
        Command::Eval { checkpoint, config } => {
            let report = cmd_eval(&checkpoint, &config).context("evaluating")?;
            println!("{}", eval_line(&report));
        }
    }
    Ok(())
}
