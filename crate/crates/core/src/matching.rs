//! Greedy score-ordered matching of detections to ground truth.
//!
//! Matching is class-aware and per-image: a detection may only claim an
//! unmatched ground-truth object of its own class on its own image.
//! Detections are visited in canonical order, so higher-confidence detections
//! pick first; among eligible objects the highest IoU wins, ties on the
//! lowest ground-truth index. With `tau = 0`, [`MATCH_EPS`] stands in as the
//! overlap requirement so that zero-overlap pairs never match.

use std::collections::HashMap;

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Positive-overlap floor used in place of `tau` when `tau = 0`.
pub const MATCH_EPS: f64 = 1e-10;

/// Shared evaluation settings. `tau` is the IoU a detection must reach to
/// validate as a true positive, `bins` the confidence bin count of the binned
/// calibration measures, `top_k` the per-image detection cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub tau: f64,
    pub bins: usize,
    pub top_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { tau: 0.5, bins: 10, top_k: 100 }
    }
}

/// Outcome of matching one dataset at one `tau`. All vectors are indexed by
/// canonical detection order; `assigned[i]` is the matched ground-truth index
/// and `iou[i]` is 0 for false positives by convention.
#[derive(Debug, Clone)]
pub struct MatchResult {
    pub tau: f64,
    pub assigned: Vec<Option<usize>>,
    pub iou: Vec<f64>,
    pub gt_assigned: Vec<Option<usize>>,
}

impl MatchResult {
    pub fn is_tp(&self, detection: usize) -> bool {
        self.assigned[detection].is_some()
    }

    pub fn n_tp(&self) -> usize {
        self.assigned.iter().filter(|a| a.is_some()).count()
    }

    pub fn n_fp(&self) -> usize {
        self.assigned.len() - self.n_tp()
    }
}

/// Matches every detection against the ground truth of its image and class.
pub fn match_detections(dataset: &Dataset, tau: f64) -> Result<MatchResult> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::Validation(format!("tau {tau} outside [0, 1)")));
    }
    let floor = if tau > 0.0 { tau } else { MATCH_EPS };

    // Group indices are pushed in dataset order, i.e. ascending, which makes
    // the lowest-index tie-break fall out of the scan below.
    let mut gt_by_group: HashMap<(u64, u32), Vec<usize>> = HashMap::new();
    for (gi, g) in dataset.ground_truth().iter().enumerate() {
        gt_by_group.entry((g.image_id, g.category_id)).or_default().push(gi);
    }

    let detections = dataset.detections();
    let mut assigned = vec![None; detections.len()];
    let mut iou = vec![0.0; detections.len()];
    let mut gt_assigned = vec![None; dataset.ground_truth().len()];

    for (di, det) in detections.iter().enumerate() {
        let Some(candidates) = gt_by_group.get(&(det.image_id, det.category_id)) else {
            continue;
        };
        let mut best: Option<(usize, f64)> = None;
        for &gi in candidates {
            if gt_assigned[gi].is_some() {
                continue;
            }
            let v = det.bbox.iou(&dataset.ground_truth()[gi].bbox);
            if v < floor {
                continue;
            }
            // Strict improvement only, so equal IoUs keep the earlier object.
            if best.map_or(true, |(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        if let Some((gi, v)) = best {
            assigned[di] = Some(gi);
            iou[di] = v;
            gt_assigned[gi] = Some(di);
        }
    }

    Ok(MatchResult { tau, assigned, iou, gt_assigned })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Category, Detection, GroundTruth};
    use crate::geometry::BBox;

    fn dataset(gts: Vec<(u64, u32, BBox)>, dets: Vec<(u64, u32, BBox, f64)>) -> Dataset {
        let mut images: Vec<u64> = gts.iter().map(|g| g.0).chain(dets.iter().map(|d| d.0)).collect();
        images.sort_unstable();
        images.dedup();
        let mut cats: Vec<u32> = gts.iter().map(|g| g.1).chain(dets.iter().map(|d| d.1)).collect();
        cats.sort_unstable();
        cats.dedup();
        Dataset::new(
            images,
            cats.into_iter().map(|id| Category { id, name: format!("c{id}") }).collect(),
            gts.into_iter()
                .map(|(image_id, category_id, bbox)| GroundTruth { image_id, category_id, bbox })
                .collect(),
            dets.into_iter()
                .map(|(image_id, category_id, bbox, score)| Detection {
                    image_id,
                    category_id,
                    bbox,
                    score,
                })
                .collect(),
        )
        .unwrap()
    }

    // GT [0,0,10,10] vs [0,0,10,10v] has IoU exactly v for v in [0,1].
    fn slab(v: f64) -> BBox {
        BBox::new(0.0, 0.0, 10.0, 10.0 * v)
    }

    #[test]
    fn higher_score_picks_first() {
        let g = BBox::new(0.0, 0.0, 10.0, 10.0);
        let ds = dataset(
            vec![(1, 1, g)],
            vec![(1, 1, slab(0.6), 0.9), (1, 1, slab(0.9), 0.8)],
        );
        let m = match_detections(&ds, 0.5).unwrap();
        assert_eq!(m.assigned, vec![Some(0), None]);
        assert!((m.iou[0] - 0.6).abs() < 1e-12);
        assert_eq!(m.iou[1], 0.0);
        assert_eq!(m.gt_assigned, vec![Some(0)]);
    }

    #[test]
    fn equal_iou_prefers_lowest_gt_index() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0);
        let ds = dataset(vec![(1, 1, b), (1, 1, b)], vec![(1, 1, b, 0.9)]);
        let m = match_detections(&ds, 0.5).unwrap();
        assert_eq!(m.assigned, vec![Some(0)]);
    }

    #[test]
    fn boundary_iou_validates() {
        let g = BBox::new(0.0, 0.0, 10.0, 10.0);
        let ds = dataset(vec![(1, 1, g)], vec![(1, 1, slab(0.5), 0.9)]);
        let m = match_detections(&ds, 0.5).unwrap();
        assert_eq!(m.n_tp(), 1);
    }

    #[test]
    fn classes_and_images_do_not_mix() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0);
        let ds = dataset(
            vec![(1, 1, b), (2, 2, b)],
            vec![(1, 2, b, 0.9), (2, 1, b, 0.8)],
        );
        let m = match_detections(&ds, 0.1).unwrap();
        assert_eq!(m.n_tp(), 0);
    }

    #[test]
    fn zero_tau_requires_positive_overlap() {
        let g = BBox::new(0.0, 0.0, 10.0, 10.0);
        let far = BBox::new(100.0, 100.0, 110.0, 110.0);
        let ds = dataset(vec![(1, 1, g)], vec![(1, 1, far, 0.9), (1, 1, slab(0.01), 0.8)]);
        let m = match_detections(&ds, 0.0).unwrap();
        assert_eq!(m.assigned, vec![None, Some(0)]);
    }

    #[test]
    fn raising_tau_never_raises_tp_count() {
        let g = BBox::new(0.0, 0.0, 10.0, 10.0);
        let ds = dataset(
            vec![(1, 1, g), (2, 1, g)],
            vec![(1, 1, slab(0.4), 0.9), (2, 1, slab(0.8), 0.7), (1, 1, slab(0.2), 0.6)],
        );
        let mut prev = usize::MAX;
        for tau in [0.0, 0.25, 0.5, 0.75] {
            let n = match_detections(&ds, tau).unwrap().n_tp();
            assert!(n <= prev);
            prev = n;
        }
    }

    #[test]
    fn tau_domain_is_checked() {
        let ds = dataset(vec![], vec![]);
        assert!(match_detections(&ds, 1.0).is_err());
        assert!(match_detections(&ds, -0.1).is_err());
        assert!(match_detections(&ds, f64::NAN).is_err());
    }
}
