//! Command-line surface. Defaults that depend on the measure (tau, bin
//! count) are modelled as options here and resolved by the subcommands.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "detcal", version, about = "Accuracy and calibration evaluation for object detectors")]
pub struct Cli {
    /// Print errors as a JSON object on stderr instead of plain text.
    #[arg(long, global = true)]
    pub json_errors: bool,

    /// Recorded in reports for provenance. No current subcommand draws
    /// random numbers; outputs depend only on inputs and flags.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Evaluate detections against ground truth: LRP, AP and the
    /// calibration error measures, overall and per class.
    Evaluate(EvaluateArgs),
    /// Fit per-class thresholds and confidence calibrators on a
    /// validation set and write the pipeline as JSON.
    CalibrateFit(CalibrateFitArgs),
    /// Run a fitted pipeline over detections and write the surviving,
    /// rescored detections in COCO results format.
    CalibrateApply(CalibrateApplyArgs),
    /// Export reliability-diagram rows for one calibration measure.
    Reliability(ReliabilityArgs),
    /// Evaluate every metric across a grid of score thresholds.
    Sweep(SweepArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Copy, Clone, ValueEnum)]
pub enum MeasureArg {
    #[value(name = "d_ece")]
    DEce,
    #[value(name = "la_ece")]
    LaEce,
    #[value(name = "la_ece0")]
    LaEce0,
}

#[derive(Copy, Clone, ValueEnum)]
pub enum ObjectiveArg {
    /// Confidence should predict the IoU of the detection (tau = 0).
    Laece0,
    /// Confidence should predict the precision at the matching tau.
    Dece,
}

#[derive(Copy, Clone, ValueEnum)]
pub enum CalibratorArg {
    /// Temperature scaling.
    Ts,
    /// Platt scaling.
    Platt,
    /// Isotonic regression.
    Ir,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Ground-truth annotations (COCO JSON).
    #[arg(long)]
    pub gt: PathBuf,
    /// Detections (COCO results JSON).
    #[arg(long)]
    pub dets: PathBuf,
    /// Matching threshold for LRP, AP, D-ECE and LaECE [default: 0.5].
    /// LaECE0 and LaACE0 always match at tau = 0.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Bin count [default: 10 for D-ECE, 25 for LaECE and LaECE0].
    #[arg(long)]
    pub bins: Option<usize>,
    /// Keep only the top-k detections per image.
    #[arg(long, default_value_t = 100)]
    pub top_k: usize,
    /// Apply per-class LRP-optimal thresholds found on the validation
    /// set (--val-gt/--val-dets) before evaluating.
    #[arg(long, requires = "val_gt", requires = "val_dets")]
    pub auto_threshold: bool,
    /// Validation ground truth for --auto-threshold.
    #[arg(long)]
    pub val_gt: Option<PathBuf>,
    /// Validation detections for --auto-threshold.
    #[arg(long)]
    pub val_dets: Option<PathBuf>,
    /// Write here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// json: full report; csv: metric,class,value rows.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Args)]
pub struct CalibrateFitArgs {
    /// Validation ground truth (COCO JSON).
    #[arg(long)]
    pub gt: PathBuf,
    /// Validation detections (COCO results JSON).
    #[arg(long)]
    pub dets: PathBuf,
    /// Calibration target the fitted confidences should estimate.
    #[arg(long, value_enum)]
    pub objective: ObjectiveArg,
    /// Calibrator family to fit per class.
    #[arg(long, value_enum)]
    pub calibrator: CalibratorArg,
    /// Matching threshold for the dece objective [default: 0.5]. The
    /// laece0 objective fixes tau at 0.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Keep only the top-k detections per image before fitting.
    #[arg(long, default_value_t = 100)]
    pub top_k: usize,
    /// Write the pipeline here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CalibrateApplyArgs {
    /// Fitted pipeline JSON from calibrate-fit.
    #[arg(long)]
    pub pipeline: PathBuf,
    /// Ground truth providing the image and category registry the
    /// detections must reference (COCO JSON).
    #[arg(long)]
    pub gt: PathBuf,
    /// Detections to threshold and rescore (COCO results JSON).
    #[arg(long)]
    pub dets: PathBuf,
    /// Write the surviving detections here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReliabilityArgs {
    /// Ground-truth annotations (COCO JSON).
    #[arg(long)]
    pub gt: PathBuf,
    /// Detections (COCO results JSON).
    #[arg(long)]
    pub dets: PathBuf,
    /// Calibration measure whose per-bin targets the rows report.
    #[arg(long, value_enum)]
    pub measure: MeasureArg,
    /// Matching threshold [default: 0.5]. la_ece0 fixes tau at 0.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Bin count [default: 10 for d_ece, 25 otherwise].
    #[arg(long)]
    pub bins: Option<usize>,
    /// Keep only the top-k detections per image.
    #[arg(long, default_value_t = 100)]
    pub top_k: usize,
    /// Write here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Args)]
pub struct SweepArgs {
    /// Ground-truth annotations (COCO JSON).
    #[arg(long)]
    pub gt: PathBuf,
    /// Detections (COCO results JSON).
    #[arg(long)]
    pub dets: PathBuf,
    /// Matching threshold for LRP, AP, D-ECE and LaECE [default: 0.5].
    #[arg(long)]
    pub tau: Option<f64>,
    /// Bin count [default: 10 for D-ECE, 25 for LaECE and LaECE0].
    #[arg(long)]
    pub bins: Option<usize>,
    /// Keep only the top-k detections per image.
    #[arg(long, default_value_t = 100)]
    pub top_k: usize,
    /// Score-threshold grid spacing; rows cover {0, step, 2*step, ...} plus 1.
    #[arg(long, default_value_t = 0.01)]
    pub step: f64,
    /// Write here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}
