use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use crystalseg::pipeline::Fusion;
use crystalseg_cli::dataset::{SplitName, SplitSelection};
use crystalseg_cli::{cmd_eval, cmd_segment, cmd_synth, EvalArgs, Outcome, SegmentArgs, SynthArgs};

/// Multi-scale crystal instance segmentation.
#[derive(Parser)]
#[command(name = "crystalseg", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Segment the images of a dataset.
    Segment {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for the predicted label maps.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// attention, average, max or single.
        #[arg(long)]
        fusion: Option<Fusion>,
        #[command(flatten)]
        split: SplitArg,
        /// Also write outline overlays to <out>/overlays.
        #[arg(long)]
        overlay: bool,
    },
    /// Score predicted label maps against the ground truth.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// JSON report; a text table is written next to it.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        split: SplitArg,
    },
}

#[derive(Args)]
struct SplitArg {
    /// train, val, test or all.
    #[arg(long, default_value = "test")]
    split: SplitSelection,
}

impl SplitArg {
    fn get(&self) -> Option<SplitName> {
        self.split.0
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()?;
    }
    match cli.command {
        Command::Synth { config, out, seed } => {
            let o = cmd_synth(&SynthArgs {
                config,
                out: out.clone(),
                seed,
            })?;
            println!("wrote {} images to {}", o.processed, out.display());
            Ok(o)
        }
        Command::Segment {
            dataset,
            config,
            out,
            seed,
            fusion,
            split,
            overlay,
        } => {
            let o = cmd_segment(&SegmentArgs {
                dataset,
                config,
                out: out.clone(),
                seed,
                fusion,
                split: split.get(),
                overlay,
            })?;
            println!(
                "segmented {} of {} images into {}",
                o.processed - o.failed,
                o.processed,
                out.display()
            );
            Ok(o)
        }
        Command::Eval {
            dataset,
            predictions,
            out,
            split,
        } => {
            let (report, o) = cmd_eval(&EvalArgs {
                dataset,
                predictions,
                out,
                split: split.get(),
            })?;
            print!("{}", report.to_table());
            Ok(o)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(o) if o.success() => ExitCode::SUCCESS,
        Ok(o) => {
            eprintln!("{} of {} images failed", o.failed, o.processed);
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
