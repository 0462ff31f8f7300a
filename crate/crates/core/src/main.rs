use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use handgen::data::{generate_synthetic, load_dataset, save_dataset, split_dataset, Split, SplitRatios};
use handgen::harness::{
    evaluate, sample_diverse, train_stage_one, train_stage_two, Checkpoint, Pretrained, TrainConfig,
};
use handgen::Result;

#[derive(Parser)]
#[command(name = "handgen", version, about = "Body-to-hand gesture prediction: training, evaluation and diverse sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a split synthetic dataset.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        frames: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train the single-hand autoencoder and the feature extractor.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train stage one.
    TrainStage1 {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train stage two on top of a stage-one checkpoint.
    TrainStage2 {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute metrics over a split and write a JSON report.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        ckpt2: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        report: PathBuf,
    },
    /// Write k diversified hand sequences for one body sequence.
    Sample {
        #[arg(long)]
        ckpt1: PathBuf,
        #[arg(long)]
        ckpt2: PathBuf,
        #[arg(long)]
        body: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Optional PNG of the samples' wrist joint angles over time.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
}

fn config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p),
        None => Ok(TrainConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            seed,
            count,
            frames,
            out,
        } => {
            let m = split_dataset(&generate_synthetic(seed, count, frames), SplitRatios::STANDARD, seed)?;
            let path = save_dataset(&m, &out)?;
            println!("{}", path.display());
        }
        Command::Pretrain { config: c, data, out } => {
            let cfg = config(c.as_deref())?;
            let m = load_dataset(&data)?;
            let p = Pretrained::train(&cfg, &m, Some(&out))?;
            p.checkpoint(&cfg, &m.split_hash()).save(&out)?;
            println!("{}", out.display());
        }
        Command::TrainStage1 { config: c, data, out } => {
            let cfg = config(c.as_deref())?;
            let m = load_dataset(&data)?;
            train_stage_one(&cfg, &m, &out)?;
            println!("{}", out.display());
        }
        Command::TrainStage2 {
            config: c,
            data,
            stage1,
            out,
        } => {
            let cfg = config(c.as_deref())?;
            let m = load_dataset(&data)?;
            train_stage_two(&cfg, &m, &stage1, &out)?;
            println!("{}", out.display());
        }
        Command::Eval {
            ckpt,
            ckpt2,
            data,
            split,
            report,
        } => {
            let first = Checkpoint::load(&ckpt)?;
            let second = ckpt2.as_deref().map(Checkpoint::load).transpose()?;
            let m = load_dataset(&data)?;
            let r = evaluate(&first, second.as_ref(), &m, split)?;
            let text = serde_json::to_string_pretty(&r)?;
            if let Some(dir) = report.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| handgen::Error::io(dir, e))?;
            }
            std::fs::write(&report, &text).map_err(|e| handgen::Error::io(&report, e))?;
            println!("{text}");
        }
        Command::Sample {
            ckpt1,
            ckpt2,
            body,
            k,
            seed,
            out,
            plot,
        } => {
            for f in sample_diverse(&ckpt1, &ckpt2, &body, k, seed, &out, plot.as_deref())? {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
