use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ctcl::export::{centers_path_for, export_embeddings};
use ctcl::gradcheck::{gradcheck, Sizes};
use ctcl::plot::render_scatter;
use ctcl::trainer::{evaluate, train, Splits};
use ctcl::{Checkpoint, Error, RngSeed, TrainConfig};

/// Train and inspect encoders supervised with softmax plus center or
/// contrastive-center loss.
#[derive(Debug, Parser)]
#[command(name = "ctcl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train from a TOML config; writes metrics, timing, and checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the embedding report for a checkpoint as JSON.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Write per-sample deep features and the center bank as CSV.
    ExportEmbeddings {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to `<out stem>.centers.csv` next to `--out`.
        #[arg(long)]
        centers_out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Render a 2-D embeddings CSV and its centers as an SVG scatter plot.
    Plot {
        #[arg(long)]
        embeddings: PathBuf,
        /// Defaults to the companion file written by export-embeddings.
        #[arg(long)]
        centers: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        m: usize,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 4)]
        d: usize,
    },
}

fn load_split(config: &Path, split: SplitArg) -> ctcl::Result<ctcl::LabeledDataset> {
    let cfg = TrainConfig::load(config)?;
    let splits = Splits::load(&cfg.dataset)?;
    Ok(match split {
        SplitArg::Train => splits.train,
        SplitArg::Test => splits.test,
    })
}

fn run(command: Command) -> ctcl::Result<()> {
    match command {
        Command::Train { config } => {
            let cfg = TrainConfig::load(&config)?;
            let outcome = train(&cfg, |r| {
                let acc = r
                    .test
                    .as_ref()
                    .map(|t| format!(" test_acc={:.4}", t.accuracy))
                    .unwrap_or_default();
                eprintln!(
                    "epoch {} loss={:.6} softmax={:.6} aux={:.6}{acc}",
                    r.epoch, r.train_loss, r.train_softmax_loss, r.train_aux_loss
                );
            })?;
            if let Some(last) = outcome.records.last() {
                println!("{}", serde_json::to_string(last)?);
            }
        }
        Command::Eval {
            config,
            checkpoint,
            split,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let report = evaluate(&ck, &load_split(&config, split)?)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::ExportEmbeddings {
            config,
            checkpoint,
            out,
            centers_out,
            split,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let centers_out = centers_out.unwrap_or_else(|| centers_path_for(&out));
            export_embeddings(&ck, &load_split(&config, split)?, &out, &centers_out)?;
        }
        Command::Plot {
            embeddings,
            centers,
            out,
        } => {
            let centers = centers.unwrap_or_else(|| centers_path_for(&embeddings));
            render_scatter(&embeddings, &centers, &out)?;
        }
        Command::Gradcheck { seed, m, k, d } => {
            let report = gradcheck(RngSeed(seed), Sizes { m, k, d })?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if let Some(w) = report.worst().filter(|w| !w.passed()) {
                return Err(Error::GradcheckFailed(format!(
                    "{}: relative error {:.3e} at {} (analytic {}, numeric {})",
                    w.name, w.max_rel_err, w.worst, w.analytic, w.numeric
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}
