use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

/// Separate a photon-pair image from a superimposed classical image using
/// intensity correlations of raw camera frames.
#[derive(Debug, Parser)]
#[command(name = "qdistill", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a frame stack from an experiment configuration.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output QDIF stack.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed of the configuration.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory receiving noise-free reference images as CSV.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
    },
    /// Correlate a stack in one streaming pass.
    Correlate {
        /// Input QDIF stack.
        stack: PathBuf,
        #[arg(long, default_value_t = 5)]
        window: usize,
        /// Output correlation file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a correlation result into quantum, classical and residual images.
    Distill {
        /// Correlation file.
        correlation: PathBuf,
        /// Stack the correlation was computed from; used for the direct image.
        #[arg(long)]
        stack: Option<PathBuf>,
        /// Configuration supplying the camera noise floor and calibration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Classical ground-truth image (CSV).
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        /// Ground truth of `|O1|^4` (CSV), for scoring the quantum image.
        #[arg(long)]
        object_truth: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure the correlation SNR over illumination ratios and fit the model.
    SnrSweep {
        #[arg(long)]
        config: PathBuf,
        /// Classical over quantum intensity ratios.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,5,10")]
        ratios: Vec<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize stacks and correlation files and export their images.
    Report {
        /// QDIF stacks and correlation files.
        #[arg(required = true)]
        artifacts: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for exported images.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
