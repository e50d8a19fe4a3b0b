//! Accuracy measures over matched detections: LRP and its location, false
//! positive and false negative components, COCO-style 101-point average
//! precision, and per-class LRP-optimal score thresholds.

use std::collections::BTreeMap;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::matching::{match_detections, MatchResult};

/// LRP over one detection set, with the decomposition alongside the counts
/// it was built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrpResult {
    pub lrp: f64,
    /// Mean localisation error (1 - IoU) / (1 - tau) over true positives;
    /// 0.0 when there are none.
    pub lrp_loc: f64,
    /// False positives over detections; 0.0 with no detections.
    pub lrp_fp: f64,
    /// False negatives over ground-truth objects; 0.0 with no objects.
    pub lrp_fn: f64,
    pub n_tp: usize,
    pub n_fp: usize,
    pub n_fn: usize,
    /// False when there is nothing to score (no detections, no objects);
    /// all values are 0.0 in that case.
    pub defined: bool,
}

fn check_tau(matches: &MatchResult, tau: f64) -> Result<()> {
    if matches.tau != tau {
        return Err(Error::TauMismatch { matches_tau: matches.tau, requested_tau: tau });
    }
    Ok(())
}

/// Core LRP accumulation over an explicit detection subset. The subset is
/// walked in the given order so callers evaluating prefixes of the same
/// list get bit-identical sums.
pub(crate) fn lrp_over(
    det_indices: &[usize],
    matches: &MatchResult,
    tau: f64,
    n_gt: usize,
) -> LrpResult {
    let mut n_tp = 0usize;
    let mut n_fp = 0usize;
    let mut loc_sum = 0.0;
    for &i in det_indices {
        if matches.assigned[i].is_some() {
            n_tp += 1;
            loc_sum += (1.0 - matches.iou[i]) / (1.0 - tau);
        } else {
            n_fp += 1;
        }
    }
    let n_fn = n_gt - n_tp;
    let n_det = n_tp + n_fp;
    let total = n_det + n_fn;
    if total == 0 {
        return LrpResult {
            lrp: 0.0,
            lrp_loc: 0.0,
            lrp_fp: 0.0,
            lrp_fn: 0.0,
            n_tp: 0,
            n_fp: 0,
            n_fn: 0,
            defined: false,
        };
    }
    LrpResult {
        lrp: ((n_fp + n_fn) as f64 + loc_sum) / total as f64,
        lrp_loc: if n_tp > 0 { loc_sum / n_tp as f64 } else { 0.0 },
        lrp_fp: if n_det > 0 { n_fp as f64 / n_det as f64 } else { 0.0 },
        lrp_fn: if n_gt > 0 { n_fn as f64 / n_gt as f64 } else { 0.0 },
        n_tp,
        n_fp,
        n_fn,
        defined: true,
    }
}

/// LRP over the whole dataset. `matches` must have been computed at `tau`.
pub fn lrp(dataset: &Dataset, matches: &MatchResult, tau: f64) -> Result<LrpResult> {
    check_tau(matches, tau)?;
    let indices: Vec<usize> = (0..dataset.detections().len()).collect();
    Ok(lrp_over(&indices, matches, tau, dataset.ground_truth().len()))
}

/// Per-class LRP. Every class with a detection or a ground-truth object
/// gets an entry.
pub fn lrp_per_class(
    dataset: &Dataset,
    matches: &MatchResult,
    tau: f64,
) -> Result<BTreeMap<u32, LrpResult>> {
    check_tau(matches, tau)?;
    let mut det_by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, d) in dataset.detections().iter().enumerate() {
        det_by_class.entry(d.category_id).or_default().push(i);
    }
    let mut gt_counts: BTreeMap<u32, usize> = BTreeMap::new();
    for g in dataset.ground_truth() {
        *gt_counts.entry(g.category_id).or_insert(0) += 1;
    }

    let empty: Vec<usize> = Vec::new();
    let mut out = BTreeMap::new();
    for &class in det_by_class.keys().chain(gt_counts.keys()) {
        if out.contains_key(&class) {
            continue;
        }
        let dets = det_by_class.get(&class).unwrap_or(&empty);
        let n_gt = gt_counts.get(&class).copied().unwrap_or(0);
        out.insert(class, lrp_over(dets, matches, tau, n_gt));
    }
    Ok(out)
}

/// 101-point interpolated average precision, macro-averaged over classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ApResult {
    pub mean: f64,
    /// One entry per class with at least one ground-truth object.
    pub per_class: BTreeMap<u32, f64>,
}

const AP_POINTS: usize = 101;

/// COCO-style AP at the IoU threshold the matches were computed with.
/// Classes without ground truth are skipped; a class with ground truth but
/// no detections scores 0. Errors if no class has any ground truth.
pub fn average_precision(dataset: &Dataset, matches: &MatchResult) -> Result<ApResult> {
    let mut gt_counts: BTreeMap<u32, usize> = BTreeMap::new();
    for g in dataset.ground_truth() {
        *gt_counts.entry(g.category_id).or_insert(0) += 1;
    }
    if gt_counts.is_empty() {
        return Err(Error::Undefined(
            "average precision needs at least one ground-truth object".into(),
        ));
    }

    let mut det_by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, d) in dataset.detections().iter().enumerate() {
        det_by_class.entry(d.category_id).or_default().push(i);
    }

    let mut per_class = BTreeMap::new();
    let mut sum = 0.0;
    for (&class, &n_gt) in &gt_counts {
        let ap = match det_by_class.get(&class) {
            Some(dets) => class_ap(dets, matches, n_gt),
            None => 0.0,
        };
        per_class.insert(class, ap);
        sum += ap;
    }
    Ok(ApResult { mean: sum / per_class.len() as f64, per_class })
}

fn class_ap(det_indices: &[usize], matches: &MatchResult, n_gt: usize) -> f64 {
    let n = det_indices.len();
    if n == 0 {
        return 0.0;
    }
    // Precision and recall after each rank, detections already in score order.
    let mut precision = Vec::with_capacity(n);
    let mut recall = Vec::with_capacity(n);
    let mut tp = 0usize;
    for (rank, &i) in det_indices.iter().enumerate() {
        if matches.assigned[i].is_some() {
            tp += 1;
        }
        precision.push(tp as f64 / (rank + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }

    // Monotone envelope: best precision at this recall or beyond.
    let mut envelope = precision.clone();
    for i in (0..n.saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }

    let mut sum = 0.0;
    let mut rank = 0usize;
    for i in 0..AP_POINTS {
        let r = i as f64 / (AP_POINTS - 1) as f64;
        while rank < n && recall[rank] < r {
            rank += 1;
        }
        if rank < n {
            sum += envelope[rank];
        }
    }
    sum / AP_POINTS as f64
}

/// Per-class score thresholds minimising class-wise LRP at `tau`.
///
/// Candidates are 0 and each distinct score of the class; a threshold keeps
/// detections scoring at or above it. Candidates keeping the same detections
/// are collapsed to the smallest, so a class whose best move is keeping
/// everything reports 0. Ties between genuinely different detection sets go
/// to the larger threshold. Classes without detections get 0.
pub fn lrp_optimal_thresholds(dataset: &Dataset, tau: f64) -> Result<BTreeMap<u32, f64>> {
    let matches = match_detections(dataset, tau)?;

    let mut det_by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, d) in dataset.detections().iter().enumerate() {
        det_by_class.entry(d.category_id).or_default().push(i);
    }
    let mut gt_counts: BTreeMap<u32, usize> = BTreeMap::new();
    for g in dataset.ground_truth() {
        *gt_counts.entry(g.category_id).or_insert(0) += 1;
    }

    let mut out = BTreeMap::new();
    for class in dataset.category_ids() {
        let dets = match det_by_class.get(&class) {
            Some(v) => v,
            None => {
                out.insert(class, 0.0);
                continue;
            }
        };
        let n_gt = gt_counts.get(&class).copied().unwrap_or(0);

        // One candidate per distinct score: the prefix through its tie group.
        // The last group keeps everything, same as threshold 0; keep the 0.
        let mut candidates: Vec<(f64, usize)> = Vec::new();
        let mut start = 0;
        while start < dets.len() {
            let score = dataset.detections()[dets[start]].score;
            let mut end = start + 1;
            while end < dets.len() && dataset.detections()[dets[end]].score == score {
                end += 1;
            }
            candidates.push((score, end));
            start = end;
        }
        candidates.pop();
        candidates.push((0.0, dets.len()));

        let mut best: Option<(f64, f64)> = None;
        for &(threshold, keep) in &candidates {
            let value = lrp_over(&dets[..keep], &matches, tau, n_gt).lrp;
            let better = match best {
                None => true,
                Some((bt, bv)) => value < bv || (value == bv && threshold > bt),
            };
            if better {
                best = Some((threshold, value));
            }
        }
        out.insert(class, best.expect("class has detections").0);
    }
    Ok(out)
}
