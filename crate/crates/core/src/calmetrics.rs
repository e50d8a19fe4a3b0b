//! Calibration measures over matched detections.
//!
//! All of them compare confidences against an empirical target, but they
//! disagree on what the target is and on how detections are grouped:
//!
//! * [`d_ece`]: class-agnostic, binned, target is bin precision. Needs
//!   matches at tau > 0.
//! * [`la_ece`]: class-wise, binned, target is precision times mean IoU of
//!   the bin's matched detections. Needs tau > 0.
//! * [`la_ece0`]: class-wise, binned, target is mean IoU over all of the
//!   bin's detections, unmatched ones counting as 0. Needs tau = 0.
//! * [`la_ace0`]: class-wise, bin-free, mean |confidence - IoU| per
//!   detection. Needs tau = 0.
//! * [`coco_style_d_ece`]: [`d_ece`] averaged over a set of taus.
//! * [`kernel_ce`]: binning-free leave-one-out kernel regression estimate.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::matching::{match_detections, MatchResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    DEce,
    LaEce,
    LaEce0,
    LaAce0,
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Measure::DEce => "d_ece",
            Measure::LaEce => "la_ece",
            Measure::LaEce0 => "la_ece0",
            Measure::LaAce0 => "la_ace0",
        })
    }
}

/// Aggregates for one occupied confidence bin, pooled over classes.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BinStats {
    pub bin: usize,
    pub count: usize,
    pub mean_confidence: f64,
    pub precision: f64,
    /// Mean IoU over matched detections, except for the tau = 0 measures
    /// where it runs over all detections with unmatched ones at 0.
    pub mean_iou: f64,
    /// |mean confidence - target| under the report's measure.
    pub error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub measure: Measure,
    pub tau: f64,
    pub num_bins: usize,
    pub value: f64,
    /// Occupied bins only, ascending by bin index, pooled over classes.
    pub bins: Vec<BinStats>,
    /// Class-wise values for the class-wise measures; empty for D-ECE.
    pub per_class: BTreeMap<u32, f64>,
}

/// One row of a reliability diagram.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ReliabilityRow {
    pub bin_low: f64,
    pub bin_high: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub target: f64,
}

/// Maps a confidence in [0, 1] to its bin among `num_bins` equal-width
/// bins; every bin is half-open except the last, which includes 1.0.
pub fn bin_index(confidence: f64, num_bins: usize) -> usize {
    debug_assert!(num_bins >= 1);
    (((confidence * num_bins as f64).floor()) as usize).min(num_bins - 1)
}

#[derive(Debug, Clone, Copy, Default)]
struct BinAcc {
    count: usize,
    conf_sum: f64,
    tp: usize,
    iou_sum: f64,
}

impl BinAcc {
    fn add(&mut self, confidence: f64, is_tp: bool, iou: f64) {
        self.count += 1;
        self.conf_sum += confidence;
        if is_tp {
            self.tp += 1;
        }
        self.iou_sum += iou;
    }

    fn mean_conf(&self) -> f64 {
        self.conf_sum / self.count as f64
    }

    fn precision(&self) -> f64 {
        self.tp as f64 / self.count as f64
    }

    fn mean_iou_matched(&self) -> f64 {
        if self.tp > 0 {
            self.iou_sum / self.tp as f64
        } else {
            0.0
        }
    }

    fn mean_iou_all(&self) -> f64 {
        self.iou_sum / self.count as f64
    }

    fn target(&self, measure: Measure) -> f64 {
        match measure {
            Measure::DEce => self.precision(),
            Measure::LaEce => self.precision() * self.mean_iou_matched(),
            Measure::LaEce0 => self.mean_iou_all(),
            Measure::LaAce0 => unreachable!("LaACE0 is not binned"),
        }
    }

    fn stats(&self, bin: usize, measure: Measure) -> BinStats {
        BinStats {
            bin,
            count: self.count,
            mean_confidence: self.mean_conf(),
            precision: self.precision(),
            mean_iou: match measure {
                Measure::LaEce0 => self.mean_iou_all(),
                _ => self.mean_iou_matched(),
            },
            error: (self.mean_conf() - self.target(measure)).abs(),
        }
    }
}

fn require_positive_tau(name: &str, matches: &MatchResult) -> Result<()> {
    if matches.tau > 0.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "{name} needs matches at tau > 0, got tau = {}",
            matches.tau
        )))
    }
}

fn require_zero_tau(name: &str, matches: &MatchResult) -> Result<()> {
    if matches.tau == 0.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "{name} needs matches at tau = 0, got tau = {}",
            matches.tau
        )))
    }
}

fn require_bins(num_bins: usize) -> Result<()> {
    if num_bins >= 1 {
        Ok(())
    } else {
        Err(Error::Validation("number of bins must be at least 1".into()))
    }
}

fn detections_by_class(dataset: &Dataset) -> BTreeMap<u32, Vec<usize>> {
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, d) in dataset.detections().iter().enumerate() {
        by_class.entry(d.category_id).or_default().push(i);
    }
    by_class
}

/// Detection expected calibration error: confidence against precision,
/// pooled over classes.
pub fn d_ece(dataset: &Dataset, matches: &MatchResult, num_bins: usize) -> Result<CalibrationReport> {
    require_positive_tau("D-ECE", matches)?;
    require_bins(num_bins)?;
    let dets = dataset.detections();
    if dets.is_empty() {
        return Err(Error::Undefined("D-ECE is undefined without detections".into()));
    }

    let mut bins = vec![BinAcc::default(); num_bins];
    for (i, d) in dets.iter().enumerate() {
        bins[bin_index(d.score, num_bins)].add(d.score, matches.is_tp(i), matches.iou[i]);
    }

    let n = dets.len() as f64;
    let mut value = 0.0;
    let mut stats = Vec::new();
    for (j, acc) in bins.iter().enumerate() {
        if acc.count == 0 {
            continue;
        }
        let s = acc.stats(j, Measure::DEce);
        value += acc.count as f64 / n * s.error;
        stats.push(s);
    }
    Ok(CalibrationReport {
        measure: Measure::DEce,
        tau: matches.tau,
        num_bins,
        value,
        bins: stats,
        per_class: BTreeMap::new(),
    })
}

/// D-ECE computed per detection instead of per bin: each true positive
/// contributes |confidence - 1| signed into its bin, each false positive
/// contributes its confidence, and bin totals are folded by absolute value.
/// Algebraically identical to [`d_ece`]; kept as an independent route.
pub fn d_ece_reduced(dataset: &Dataset, matches: &MatchResult, num_bins: usize) -> Result<f64> {
    require_positive_tau("D-ECE", matches)?;
    require_bins(num_bins)?;
    let dets = dataset.detections();
    if dets.is_empty() {
        return Err(Error::Undefined("D-ECE is undefined without detections".into()));
    }

    let mut signed = vec![0.0; num_bins];
    for (i, d) in dets.iter().enumerate() {
        let contribution = if matches.is_tp(i) { d.score - 1.0 } else { d.score };
        signed[bin_index(d.score, num_bins)] += contribution;
    }
    Ok(signed.iter().map(|s| s.abs()).sum::<f64>() / dets.len() as f64)
}

fn classwise_report(
    dataset: &Dataset,
    matches: &MatchResult,
    num_bins: usize,
    measure: Measure,
) -> Result<CalibrationReport> {
    require_bins(num_bins)?;
    let by_class = detections_by_class(dataset);
    if by_class.is_empty() {
        return Err(Error::Undefined(format!("{measure} is undefined without detections")));
    }

    let dets = dataset.detections();
    let mut pooled = vec![BinAcc::default(); num_bins];
    let mut per_class = BTreeMap::new();
    let mut sum = 0.0;
    for (&class, indices) in &by_class {
        let mut bins = vec![BinAcc::default(); num_bins];
        for &i in indices {
            let d = &dets[i];
            let bin = bin_index(d.score, num_bins);
            bins[bin].add(d.score, matches.is_tp(i), matches.iou[i]);
            pooled[bin].add(d.score, matches.is_tp(i), matches.iou[i]);
        }
        let n_c = indices.len() as f64;
        let mut value = 0.0;
        for acc in &bins {
            if acc.count > 0 {
                value += acc.count as f64 / n_c * (acc.mean_conf() - acc.target(measure)).abs();
            }
        }
        per_class.insert(class, value);
        sum += value;
    }

    let value = sum / per_class.len() as f64;
    let bins = pooled
        .iter()
        .enumerate()
        .filter(|(_, acc)| acc.count > 0)
        .map(|(j, acc)| acc.stats(j, measure))
        .collect();
    Ok(CalibrationReport { measure, tau: matches.tau, num_bins, value, bins, per_class })
}

/// Localisation-aware ECE at the matching threshold of `matches`: per class,
/// confidence against precision times mean matched IoU, averaged over
/// classes with detections.
pub fn la_ece(dataset: &Dataset, matches: &MatchResult, num_bins: usize) -> Result<CalibrationReport> {
    require_positive_tau("LaECE", matches)?;
    classwise_report(dataset, matches, num_bins, Measure::LaEce)
}

/// Localisation-aware ECE on tau = 0 matches: per class, confidence against
/// mean IoU over all of the bin's detections, unmatched ones scoring 0.
pub fn la_ece0(dataset: &Dataset, matches: &MatchResult, num_bins: usize) -> Result<CalibrationReport> {
    require_zero_tau("LaECE0", matches)?;
    classwise_report(dataset, matches, num_bins, Measure::LaEce0)
}

/// Bin-free companion of [`la_ece0`]: per class, the mean absolute gap
/// between each detection's confidence and its IoU.
pub fn la_ace0(dataset: &Dataset, matches: &MatchResult) -> Result<CalibrationReport> {
    require_zero_tau("LaACE0", matches)?;
    let by_class = detections_by_class(dataset);
    if by_class.is_empty() {
        return Err(Error::Undefined("LaACE0 is undefined without detections".into()));
    }

    let dets = dataset.detections();
    let mut per_class = BTreeMap::new();
    let mut sum = 0.0;
    for (&class, indices) in &by_class {
        let mut gap = 0.0;
        for &i in indices {
            gap += (dets[i].score - matches.iou[i]).abs();
        }
        let value = gap / indices.len() as f64;
        per_class.insert(class, value);
        sum += value;
    }
    Ok(CalibrationReport {
        measure: Measure::LaAce0,
        tau: matches.tau,
        num_bins: 0,
        value: sum / per_class.len() as f64,
        bins: Vec::new(),
        per_class,
    })
}

/// [`d_ece`] averaged over a set of matching thresholds, each tau matched
/// from scratch. Every tau must be positive.
pub fn coco_style_d_ece(dataset: &Dataset, taus: &[f64], num_bins: usize) -> Result<f64> {
    if taus.is_empty() {
        return Err(Error::Validation("coco-style D-ECE needs at least one tau".into()));
    }
    let mut sum = 0.0;
    for &tau in taus {
        let matches = match_detections(dataset, tau)?;
        sum += d_ece(dataset, &matches, num_bins)?.value;
    }
    Ok(sum / taus.len() as f64)
}

/// Target a detection's confidence is regressed against in [`kernel_ce`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelLink {
    /// The matched IoU, 0 for unmatched detections.
    Iou,
    /// 1 for matched detections, 0 otherwise.
    TpIndicator,
}

/// Binning-free calibration error: per class, each detection's confidence is
/// compared with a leave-one-out Gaussian kernel regression of the target
/// over the remaining same-class detections, and classes are averaged.
/// Classes with fewer than two detections carry no estimate and are skipped.
pub fn kernel_ce(
    dataset: &Dataset,
    matches: &MatchResult,
    link: KernelLink,
    bandwidth: f64,
) -> Result<f64> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::Validation(format!("bandwidth must be positive, got {bandwidth}")));
    }

    let dets = dataset.detections();
    let mut class_values = Vec::new();
    for (_, indices) in detections_by_class(dataset) {
        let n = indices.len();
        if n < 2 {
            continue;
        }
        let scores: Vec<f64> = indices.iter().map(|&i| dets[i].score).collect();
        let targets: Vec<f64> = indices
            .iter()
            .map(|&i| match link {
                KernelLink::Iou => matches.iou[i],
                KernelLink::TpIndicator => matches.is_tp(i) as u8 as f64,
            })
            .collect();

        let mut sum = 0.0;
        for i in 0..n {
            // Exponents are shifted by their minimum before exponentiation,
            // so the largest weight is exactly 1 and far-apart neighbours
            // cannot underflow the denominator to zero.
            let mut exponents = Vec::with_capacity(n - 1);
            let mut min_exp = f64::INFINITY;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let delta = scores[i] - scores[j];
                let e = delta * delta / (2.0 * bandwidth * bandwidth);
                min_exp = min_exp.min(e);
                exponents.push((e, targets[j]));
            }
            let mut num = 0.0;
            let mut den = 0.0;
            for (e, t) in exponents {
                let w = (min_exp - e).exp();
                num += w * t;
                den += w;
            }
            sum += (scores[i] - num / den).abs();
        }
        class_values.push(sum / n as f64);
    }

    if class_values.is_empty() {
        return Err(Error::Undefined(
            "kernel calibration error needs a class with at least two detections".into(),
        ));
    }
    Ok(class_values.iter().sum::<f64>() / class_values.len() as f64)
}

/// Rows for a reliability diagram of a binned report. The target column is
/// the report measure's own notion of a perfectly calibrated confidence.
pub fn reliability_data(report: &CalibrationReport) -> Vec<ReliabilityRow> {
    report
        .bins
        .iter()
        .map(|b| {
            let target = match report.measure {
                Measure::DEce => b.precision,
                Measure::LaEce => b.precision * b.mean_iou,
                Measure::LaEce0 | Measure::LaAce0 => b.mean_iou,
            };
            ReliabilityRow {
                bin_low: b.bin as f64 / report.num_bins as f64,
                bin_high: (b.bin + 1) as f64 / report.num_bins as f64,
                count: b.count,
                mean_confidence: b.mean_confidence,
                target,
            }
        })
        .collect()
}
