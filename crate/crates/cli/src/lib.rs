//! Command-line front end: dataset tooling, detection, evaluation,
//! background subtraction and the monitoring service.

mod commands;
pub mod error;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use error::{CliError, EXIT_INVALID, EXIT_OK, EXIT_RUNTIME};

#[derive(Debug, Parser)]
#[command(name = "bargewatch", version, about = "Barge traffic monitoring from river cameras")]
pub struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a manifest into train/val/test id lists.
    Split(SplitArgs),
    /// Write augmented copies of every original image.
    Augment(AugmentArgs),
    /// Run a detector over images and write predictions.
    Detect(DetectArgs),
    /// Scene class of each image in a prediction file, or of a label list.
    Classify(ClassifyArgs),
    /// Scene-level and box-level metrics.
    Evaluate(EvaluateArgs),
    /// Running-average background subtraction over an image sequence.
    Bgsub(BgsubArgs),
    /// Run the camera monitors, serving the HTTP API unless --no-serve.
    Monitor(MonitorArgs),
    /// Serve the HTTP API over existing event logs.
    Serve(ServeArgs),
    /// Print the version.
    Version,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Debug, Args)]
pub struct ManifestArgs {
    /// JSONL dataset manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Class-name file, one name per line, in label-file index order.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub input: ManifestArgs,
    /// Directory receiving train.txt, val.txt and test.txt.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train, validation and test shares.
    #[arg(long, conflicts_with = "holdout")]
    pub ratios: Option<String>,
    /// Where augmented children of test originals go: val or train.
    #[arg(long, conflicts_with = "holdout")]
    pub test_children: Option<String>,
    /// Leave-one-location-out split: test is the originals at this location.
    #[arg(long)]
    pub holdout: Option<String>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub input: ManifestArgs,
    /// TOML augmentation config.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("images_in").required(true).args(["manifest", "images"])))]
#[command(group(clap::ArgGroup::new("backend").required(true).args(["fixture", "model"])))]
pub struct DetectArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Directory of images; ids are file stems.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Stub backend: replay detections from this prediction file.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    /// ONNX model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    pub input_size: Option<u32>,
    #[arg(long, requires = "model")]
    pub conf: Option<f64>,
    #[arg(long, requires = "model")]
    pub nms_iou: Option<f64>,
    /// Class-name file for the model outputs.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Prediction file to write; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("what").required(true).args(["pred", "objects"])))]
pub struct ClassifyArgs {
    /// Prediction file.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Comma-separated object labels present in one image.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub objects: Option<Vec<String>>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Ground truth: a dataset manifest, or a CSV of
    /// `image_id,observed,predicted` scene pairs.
    #[arg(long)]
    pub gt: PathBuf,
    /// Prediction file (manifest mode only).
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Box match threshold.
    #[arg(long, default_value_t = bargewatch_core::evalsuite::DEFAULT_MATCH_IOU)]
    pub iou: f64,
    /// Extra report over records matching `key=value[,key=value]`.
    #[arg(long)]
    pub slice: Vec<String>,
    /// Wall time of the detection run, for a throughput line.
    #[arg(long)]
    pub elapsed_seconds: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BgsubMode {
    Normalize,
    Mask,
    Both,
}

#[derive(Debug, Args)]
pub struct BgsubArgs {
    /// Directory of frames, processed in file-name order.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, value_enum, default_value_t = BgsubMode::Normalize)]
    pub mode: BgsubMode,
}

#[derive(Debug, Args)]
pub struct ServerOverrides {
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    /// TOML monitor config.
    #[arg(long)]
    pub config: PathBuf,
    /// Process the cameras without starting the HTTP API.
    #[arg(long)]
    pub no_serve: bool,
    #[command(flatten)]
    pub overrides: ServerOverrides,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub overrides: ServerOverrides,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    let mut stdout = std::io::stdout().lock();
    match execute(cli.command, &mut stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = stdout.flush();
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp_millis()
        .try_init();
}

/// Runs one command, writing results to `out`.
pub fn execute(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Split(a) => commands::split(a, out),
        Command::Augment(a) => commands::augment(a, out),
        Command::Detect(a) => commands::detect(a, out),
        Command::Classify(a) => commands::classify(a, out),
        Command::Evaluate(a) => commands::evaluate(a, out),
        Command::Bgsub(a) => commands::bgsub(a, out),
        Command::Monitor(a) => commands::monitor(a, out),
        Command::Serve(a) => commands::serve(a),
        Command::Version => {
            writeln!(out, "bargewatch {}", env!("CARGO_PKG_VERSION")).map_err(|e| CliError::Runtime(e.to_string()))
        }
    }
}
