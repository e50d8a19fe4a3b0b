//! The calibrate-fit and calibrate-apply subcommands.

use detcal::calibrators::{apply_pipeline, train_pipeline, CalibrationPipeline, CalibratorKind, Objective};
use detcal::dataset::{load_detections, load_ground_truth};
use detcal::{Error, Result};

use crate::args::{CalibrateApplyArgs, CalibrateFitArgs, CalibratorArg, ObjectiveArg};
use crate::inputs::load_pair;
use crate::output::write_output;

fn kind(arg: CalibratorArg) -> CalibratorKind {
    match arg {
        CalibratorArg::Ts => CalibratorKind::Temperature,
        CalibratorArg::Platt => CalibratorKind::Platt,
        CalibratorArg::Ir => CalibratorKind::Isotonic,
    }
}

fn objective(arg: ObjectiveArg, tau: Option<f64>) -> Result<Objective> {
    match arg {
        ObjectiveArg::Laece0 => match tau {
            None => Ok(Objective::LaEce0),
            Some(0.0) => Ok(Objective::LaEce0),
            Some(t) => Err(Error::Validation(format!(
                "the laece0 objective fixes tau at 0; got --tau {t}"
            ))),
        },
        ObjectiveArg::Dece => Ok(Objective::DEce { tau: tau.unwrap_or(0.5) }),
    }
}

pub fn fit(args: CalibrateFitArgs) -> Result<()> {
    let val = load_pair(&args.gt, &args.dets, args.top_k)?;
    let pipeline = train_pipeline(&val, objective(args.objective, args.tau)?, kind(args.calibrator))?;
    let mut text = pipeline.to_json();
    text.push('\n');
    write_output(&args.out, &text)
}

pub fn apply(args: CalibrateApplyArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.pipeline).map_err(|source| Error::Io {
        path: args.pipeline.display().to_string(),
        source,
    })?;
    let pipeline = CalibrationPipeline::from_json(&text)?;

    let base = load_ground_truth(&args.gt)?;
    let dataset = load_detections(&args.dets, &base)?;
    let outcome = apply_pipeline(&pipeline, &dataset)?;
    if !outcome.missing_classes.is_empty() {
        eprintln!(
            "warning: classes {:?} have no pipeline entry; their detections pass through uncalibrated",
            outcome.missing_classes
        );
    }

    let mut text = outcome.dataset.detections_to_json();
    text.push('\n');
    write_output(&args.out, &text)
}
