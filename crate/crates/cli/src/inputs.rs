//! Input loading and flag resolution shared by the subcommands.

use std::path::Path;

use detcal::dataset::{load_detections, load_ground_truth, Dataset};
use detcal::{Error, Result};

/// Loads ground truth and detections and applies the per-image cap.
pub fn load_pair(gt: &Path, dets: &Path, top_k: usize) -> Result<Dataset> {
    let base = load_ground_truth(gt)?;
    let dataset = load_detections(dets, &base)?;
    dataset.top_k_per_image(top_k)
}

/// Matching threshold for the tau-dependent measures.
pub fn resolve_tau(flag: Option<f64>, default: f64) -> Result<f64> {
    let tau = flag.unwrap_or(default);
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::Validation(format!("tau must be in [0, 1), got {tau}")));
    }
    Ok(tau)
}
