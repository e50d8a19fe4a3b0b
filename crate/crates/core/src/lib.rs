//! Joint accuracy and calibration evaluation for object detectors.
//!
//! The crate measures two things about a detector's output on a COCO-style
//! dataset. Accuracy: LRP (with location, false-positive and false-negative
//! components) and 101-point interpolated AP. Calibration: how well detection
//! confidences track detection quality, via binned measures (D-ECE, LaECE,
//! LaECE0), the bin-free LaACE0, and a kernel-smoothed alternative. On top of
//! the measures sit per-class LRP-optimal score thresholds and post-hoc
//! confidence calibrators (temperature scaling, Platt scaling, isotonic
//! regression) wrapped in a class-wise threshold/calibrate/re-threshold
//! pipeline.
//!
//! Module layout follows the data flow:
//!
//! * [`geometry`]: boxes and IoU.
//! * [`dataset`]: COCO JSON ingestion, canonical score ordering, subset ops.
//! * [`matching`]: greedy class-aware matching of detections to ground truth.
//! * [`accuracy`]: LRP, AP, LRP-optimal thresholds.
//! * [`calmetrics`]: calibration error measures and reliability-diagram data.
//! * [`calibrators`]: confidence calibrators and the class-wise pipeline.
//! * [`optimization`]: the numeric kernels behind the calibrator fits.

pub mod accuracy;
pub mod calibrators;
pub mod calmetrics;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod matching;
pub mod optimization;

pub use error::{Error, Result};
