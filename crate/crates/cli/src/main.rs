//! `panfpn`: panoptic fusion, evaluation, cost profiling, the training demo
//! and format conversion from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 validation or data error,
//! 3 internal error (including failed self-checks and diverged training).

mod commands;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "panfpn", version, about = "Panoptic FPN toolkit")]
pub struct Cli {
    /// Seed for every randomised subcommand.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-image parallelism (0 = all cores).
    #[arg(long, global = true, env = "PANFPN_THREADS", default_value_t = 1)]
    pub threads: usize,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Merge instance predictions and a semantic map into a panoptic map.
    Fuse(FuseArgs),
    /// PQ and mIoU of a predicted dataset against ground truth.
    Evaluate(EvaluateArgs),
    /// Analytic multiply-add and activation counts of an architecture.
    Profile(ProfileArgs),
    /// Overfit the semantic branch on a synthetic scene.
    TrainDemo(TrainDemoArgs),
    /// Convert id-map PNGs to tensor files and back.
    Convert(ConvertArgs),
    /// Run the built-in oracle suites.
    Selfcheck(SelfcheckArgs),
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Instance predictions, one RLE JSON record per line.
    #[arg(long)]
    pub instances: PathBuf,
    /// Semantic scores as a (1, C, H, W) tensor file.
    #[arg(long)]
    pub semantic: PathBuf,
    /// Category JSON (array, or object with `categories` and `channels`).
    #[arg(long)]
    pub categories: PathBuf,
    /// Output directory; receives `panoptic.json` and `panoptic/<name>.png`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub score_thresh: f32,
    #[arg(long, default_value_t = 0.5)]
    pub keep_frac: f32,
    #[arg(long, default_value_t = 4096)]
    pub stuff_area: u64,
    /// Category id of the semantic `other` class, if the head has one.
    #[arg(long)]
    pub other_id: Option<u32>,
    #[arg(long, default_value = "0")]
    pub image_id: String,
    #[arg(long, default_value = "fused.png")]
    pub file_name: String,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted annotation JSON.
    #[arg(long)]
    pub pred: PathBuf,
    /// PNG directory of the predictions [default: JSON path without extension].
    #[arg(long)]
    pub pred_dir: Option<PathBuf>,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub gt_dir: Option<PathBuf>,
    /// Replace declared segment areas with pixel counts instead of failing.
    #[arg(long)]
    pub repair_areas: bool,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// `builtin:<name>` or a path to an architecture spec file.
    #[arg(long, default_value = "builtin:r101-fpn")]
    pub arch: String,
    /// Input extent as HxW.
    #[arg(long, value_parser = parse_extent, default_value = "1152x1728")]
    pub image: Extent,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    /// Compare dilated, symmetric-decoder and FPN variants of the backbone.
    #[arg(long)]
    pub compare: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extent(pub usize, pub usize);

impl fmt::Display for Extent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.0, self.1)
    }
}

fn parse_extent(s: &str) -> Result<Extent, String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let dim = |v: &str| match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("`{v}` is not a positive integer")),
    };
    Ok(Extent(dim(h)?, dim(w)?))
}

#[derive(Debug, Args)]
pub struct TrainDemoArgs {
    /// Config file; defaults to the bundled reference configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda_i: Option<f64>,
    #[arg(long)]
    pub lambda_s: Option<f64>,
    /// Output directory for `loss.csv` and `checkpoint/`.
    #[arg(long)]
    pub out: PathBuf,
    /// Also train every (lambda_i, lambda_s) in {0.5, 0.75, 1.0}^2 and write `sweep.csv`.
    #[arg(long)]
    pub sweep: bool,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// `.png` id map or `.ptsr` tensor file.
    #[arg(long)]
    pub input: PathBuf,
    /// Target file; the conversion direction follows the extensions.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelfcheckArgs {
    /// Random cases per suite.
    #[arg(long, default_value_t = 200)]
    pub cases: usize,
}

/// Failure classified by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl From<panfpn::Error> for CliError {
    fn from(e: panfpn::Error) -> Self {
        use panfpn::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidArgument(_) => CliError::Usage(msg),
            E::ShapeMismatch { .. }
            | E::Degenerate(_)
            | E::MissingFile { .. }
            | E::Malformed { .. }
            | E::Validation(_)
            | E::Io(_) => CliError::Data(msg),
            E::Diverged { .. } | E::BackwardBeforeForward => CliError::Internal(msg),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(&cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
