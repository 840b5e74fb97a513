//! Command-line front end: dataset statistics, category maps, synthetic
//! corpora, curation, evaluation, parameter sweeps and self-checks.
//!
//! Exit codes: 0 success, 1 a check failed, 2 bad input or usage.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "vistk", version, about = "Pseudo-label curation and evaluation for video instance segmentation")]
pub struct Cli {
    /// Pipeline config file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; all cores by default.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-category image or video counts of a dataset file.
    Stats {
        path: PathBuf,
        /// Read an image dataset as box-only annotations.
        #[arg(long)]
        boxes: bool,
    },
    /// Matches video categories to image-dataset categories.
    Catmap {
        #[arg(long)]
        videos: PathBuf,
        #[arg(long)]
        pixel: PathBuf,
        #[arg(long = "box")]
        boxes: PathBuf,
        /// Lines of `video_name = image_name[, image_name...]`.
        #[arg(long)]
        aliases: Option<PathBuf>,
    },
    /// Writes a synthetic ground truth, corrupted detections and their ledger.
    Gen,
    /// Turns raw detections into filtered pseudo-label tracks.
    Curate,
    /// Scores predictions against ground truth.
    Eval {
        /// Defaults to the curated pseudo-labels in the output directory.
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Curates and evaluates once per value of a filter parameter.
    Sweep {
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<String>,
    },
    /// Gradient and RLE consistency checks.
    Selfcheck {
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        instances: Option<usize>,
        /// RLE reference cases replacing the built-in set.
        #[arg(long)]
        golden: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    #[value(name = "K", alias = "k")]
    K,
    #[value(name = "tau")]
    Tau,
}

impl SweepParam {
    pub fn label(self) -> &'static str {
        match self {
            SweepParam::K => "K",
            SweepParam::Tau => "tau",
        }
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    // commands write into a buffer so they can run inside a worker pool
    let mut buf = Vec::new();
    let result = match cli.jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| commands::execute(&cli, &mut buf)),
            Err(e) => Err(anyhow::Error::new(e).context("--jobs")),
        },
        None => commands::execute(&cli, &mut buf),
    };
    let _ = out.write_all(&buf);
    match result {
        Ok(commands::Status::Ok) => 0,
        Ok(commands::Status::Failed) => 1,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            2
        }
    }
}
