//! Post-hoc confidence calibrators and the class-wise pipeline that fits
//! and applies them.
//!
//! Three model families are supported, all monotone nondecreasing on [0, 1]:
//! temperature scaling rescales the logit, Platt scaling shifts and scales
//! it, and isotonic regression fits a free-form monotone step function. The
//! pipeline wraps them in the full procedure: pick per-class calibration
//! thresholds, fit on the survivors, then pick per-class operating
//! thresholds on the calibrated scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::accuracy::lrp_optimal_thresholds;
use crate::dataset::{Dataset, Detection};
use crate::error::{Error, Result};
use crate::matching::{match_detections, MatchResult};
use crate::optimization::{golden_section, lbfgs, pava, OptimError};

/// Confidences are clamped this far away from 0 and 1 before a logit.
pub const CONF_EPS: f64 = 1e-7;

/// Fixed score cutoff for the pairs feeding a D-ECE objective fit.
pub const DECE_PRETHRESHOLD: f64 = 0.30;

const GRAD_TOL: f64 = 1e-8;
const MAX_FIT_ITERS: usize = 200;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(CONF_EPS, 1.0 - CONF_EPS);
    (p / (1.0 - p)).ln()
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// A fitted calibration map from confidence to confidence.
#[derive(Debug, Clone, PartialEq)]
pub enum Calibrator {
    Identity,
    /// sigmoid(logit(p) / t), t > 0.
    Temperature { t: f64 },
    /// sigmoid(a * logit(p) + b), a >= 0.
    Platt { a: f64, b: f64 },
    /// Piecewise-linear interpolation through (x, y) knots with strictly
    /// ascending x and nondecreasing y; constant beyond the ends.
    Isotonic { knots: Vec<(f64, f64)> },
}

impl Calibrator {
    /// Maps a confidence in [0, 1] to a calibrated confidence in [0, 1];
    /// monotone nondecreasing for every variant.
    pub fn apply(&self, p: f64) -> f64 {
        let out = match self {
            Calibrator::Identity => p,
            Calibrator::Temperature { t } => sigmoid(logit(p) / t),
            Calibrator::Platt { a, b } => sigmoid(a * logit(p) + b),
            Calibrator::Isotonic { knots } => interpolate(knots, p),
        };
        out.clamp(0.0, 1.0)
    }

    /// Mean cross-entropy of the calibrated confidences against the
    /// targets. Useful for comparing fitted models on held-out pairs.
    pub fn mean_nll(&self, pairs: &[(f64, f64)]) -> f64 {
        let mut sum = 0.0;
        for &(p, t) in pairs {
            let q = self.apply(p).clamp(CONF_EPS, 1.0 - CONF_EPS);
            sum -= t * q.ln() + (1.0 - t) * (1.0 - q).ln();
        }
        sum / pairs.len() as f64
    }

    fn validate(&self) -> Result<()> {
        match self {
            Calibrator::Identity => Ok(()),
            Calibrator::Temperature { t } => {
                if t.is_finite() && *t > 0.0 {
                    Ok(())
                } else {
                    Err(Error::Validation(format!("temperature must be positive, got {t}")))
                }
            }
            Calibrator::Platt { a, b } => {
                if a.is_finite() && *a >= 0.0 && b.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Validation(format!(
                        "platt parameters need a >= 0 and finite b, got a = {a}, b = {b}"
                    )))
                }
            }
            Calibrator::Isotonic { knots } => {
                if knots.is_empty() {
                    return Err(Error::Validation("isotonic model has no knots".into()));
                }
                for window in knots.windows(2) {
                    if !(window[0].0 < window[1].0) {
                        return Err(Error::Validation("isotonic knot x values must be strictly ascending".into()));
                    }
                    if !(window[0].1 <= window[1].1) {
                        return Err(Error::Validation("isotonic knot y values must be nondecreasing".into()));
                    }
                }
                for &(x, y) in knots {
                    if !x.is_finite() || !(0.0..=1.0).contains(&y) {
                        return Err(Error::Validation(format!("isotonic knot ({x}, {y}) out of range")));
                    }
                }
                Ok(())
            }
        }
    }
}

fn interpolate(knots: &[(f64, f64)], p: f64) -> f64 {
    let hi = knots.partition_point(|k| k.0 < p);
    if hi == 0 {
        return knots[0].1;
    }
    if hi == knots.len() {
        return knots[knots.len() - 1].1;
    }
    let (x1, y1) = knots[hi];
    if x1 == p {
        return y1;
    }
    let (x0, y0) = knots[hi - 1];
    y0 + (y1 - y0) * (p - x0) / (x1 - x0)
}

fn validate_pairs(pairs: &[(f64, f64)]) -> Result<()> {
    for (i, &(p, t)) in pairs.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Validation(format!("pair {i}: confidence {p} outside [0, 1]")));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Validation(format!("pair {i}: target {t} outside [0, 1]")));
        }
    }
    Ok(())
}

fn fit_error(e: OptimError) -> Error {
    Error::Optimization(e.to_string())
}

/// True when a fit cannot do better than the identity: fewer than two pairs
/// or no spread in the confidences.
fn degenerate(pairs: &[(f64, f64)]) -> bool {
    pairs.len() < 2 || pairs.iter().all(|&(p, _)| p == pairs[0].0)
}

/// Mean cross-entropy of sigmoid(a * logit(p) + b) against the targets and
/// its gradient with respect to (a, b). Needs at least one pair.
pub fn platt_nll_and_grad(a: f64, b: f64, pairs: &[(f64, f64)]) -> (f64, [f64; 2]) {
    debug_assert!(!pairs.is_empty());
    let mut loss = 0.0;
    let mut grad_a = 0.0;
    let mut grad_b = 0.0;
    for &(p, t) in pairs {
        let x = logit(p);
        let z = a * x + b;
        loss += t * softplus(-z) + (1.0 - t) * softplus(z);
        let r = sigmoid(z) - t;
        grad_a += r * x;
        grad_b += r;
    }
    let n = pairs.len() as f64;
    (loss / n, [grad_a / n, grad_b / n])
}

/// Fits sigmoid(a * logit(p) + b) by cross-entropy. The slope is kept
/// nonnegative: if the unconstrained optimum has a < 0, the fit lands on
/// the a = 0 boundary and the intercept is refitted there. Degenerate
/// inputs fall back to the identity.
pub fn fit_platt(pairs: &[(f64, f64)]) -> Result<Calibrator> {
    validate_pairs(pairs)?;
    if degenerate(pairs) {
        return Ok(Calibrator::Identity);
    }

    let objective = |theta: &[f64]| {
        let (value, grad) = platt_nll_and_grad(theta[0], theta[1], pairs);
        (value, grad.to_vec())
    };
    let fit = lbfgs(objective, &[1.0, 0.0], GRAD_TOL, MAX_FIT_ITERS).map_err(fit_error)?;
    let (a, b) = (fit.x[0], fit.x[1]);
    if a >= 0.0 {
        return Ok(Calibrator::Platt { a, b });
    }

    let boundary = |theta: &[f64]| {
        let (value, grad) = platt_nll_and_grad(0.0, theta[0], pairs);
        (value, vec![grad[1]])
    };
    let refit = lbfgs(boundary, &[b], GRAD_TOL, MAX_FIT_ITERS).map_err(fit_error)?;
    Ok(Calibrator::Platt { a: 0.0, b: refit.x[0] })
}

/// Fits sigmoid(logit(p) / t) by cross-entropy, minimizing over log t in
/// [-5, 5] by golden-section search. Degenerate inputs fall back to the
/// identity.
pub fn fit_temperature(pairs: &[(f64, f64)]) -> Result<Calibrator> {
    validate_pairs(pairs)?;
    if degenerate(pairs) {
        return Ok(Calibrator::Identity);
    }

    let points: Vec<(f64, f64)> = pairs.iter().map(|&(p, t)| (logit(p), t)).collect();
    let n = points.len() as f64;
    let nll = |log_t: f64| {
        let inv_t = (-log_t).exp();
        let mut loss = 0.0;
        for &(x, t) in &points {
            let z = x * inv_t;
            loss += t * softplus(-z) + (1.0 - t) * softplus(z);
        }
        loss / n
    };
    let fit = golden_section(nll, -5.0, 5.0, 1e-10, 200).map_err(fit_error)?;
    Ok(Calibrator::Temperature { t: fit.x[0].exp() })
}

/// Fits a monotone nondecreasing map by isotonic regression: pairs with
/// equal confidence are averaged, the targets are pooled by PAVA, and the
/// result interpolates linearly between the fitted knots.
pub fn fit_isotonic(pairs: &[(f64, f64)]) -> Result<Calibrator> {
    validate_pairs(pairs)?;
    if pairs.is_empty() {
        return Err(Error::Validation("isotonic fit needs at least one pair".into()));
    }

    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ws = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let x = sorted[i].0;
        let mut j = i;
        let mut sum = 0.0;
        while j < sorted.len() && sorted[j].0 == x {
            sum += sorted[j].1;
            j += 1;
        }
        xs.push(x);
        ys.push(sum / (j - i) as f64);
        ws.push((j - i) as f64);
        i = j;
    }

    let fitted = pava(&ys, &ws).map_err(fit_error)?;
    Ok(Calibrator::Isotonic { knots: xs.into_iter().zip(fitted).collect() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibratorKind {
    Temperature,
    Platt,
    Isotonic,
}

/// Fits a calibrator of the requested kind to (confidence, target) pairs.
pub fn fit(kind: CalibratorKind, pairs: &[(f64, f64)]) -> Result<Calibrator> {
    match kind {
        CalibratorKind::Temperature => fit_temperature(pairs),
        CalibratorKind::Platt => fit_platt(pairs),
        CalibratorKind::Isotonic => fit_isotonic(pairs),
    }
}

/// What the calibrator is trained to be calibrated for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Objective {
    /// Per-class IoU targets under tau = 0 matching.
    #[serde(rename = "laece0")]
    LaEce0,
    /// Pooled binary TP/FP targets at this tau, pairs pre-thresholded at
    /// [`DECE_PRETHRESHOLD`].
    #[serde(rename = "dece")]
    DEce { tau: f64 },
}

impl Objective {
    /// Matching threshold the pipeline thresholds and evaluates at.
    pub fn tau(&self) -> f64 {
        match self {
            Objective::LaEce0 => 0.0,
            Objective::DEce { tau } => *tau,
        }
    }
}

/// Per-class piece of a fitted pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCalibration {
    /// Raw-score cutoff applied before calibration.
    pub u_thr: f64,
    /// Calibrated-score cutoff applied after calibration.
    pub v_thr: f64,
    pub model: Calibrator,
}

/// A fitted calibration pipeline: one threshold-calibrate-threshold entry
/// per class in the training registry.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationPipeline {
    pub objective: Objective,
    pub classes: BTreeMap<u32, ClassCalibration>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind")]
enum ModelRepr {
    #[serde(rename = "identity")]
    Identity,
    #[serde(rename = "temperature")]
    Temperature { params: [f64; 1] },
    #[serde(rename = "platt")]
    Platt { params: [f64; 2] },
    #[serde(rename = "isotonic")]
    Isotonic { knots: Vec<[f64; 2]> },
}

impl From<&Calibrator> for ModelRepr {
    fn from(model: &Calibrator) -> Self {
        match model {
            Calibrator::Identity => ModelRepr::Identity,
            Calibrator::Temperature { t } => ModelRepr::Temperature { params: [*t] },
            Calibrator::Platt { a, b } => ModelRepr::Platt { params: [*a, *b] },
            Calibrator::Isotonic { knots } => ModelRepr::Isotonic {
                knots: knots.iter().map(|&(x, y)| [x, y]).collect(),
            },
        }
    }
}

impl From<ModelRepr> for Calibrator {
    fn from(repr: ModelRepr) -> Self {
        match repr {
            ModelRepr::Identity => Calibrator::Identity,
            ModelRepr::Temperature { params } => Calibrator::Temperature { t: params[0] },
            ModelRepr::Platt { params } => Calibrator::Platt { a: params[0], b: params[1] },
            ModelRepr::Isotonic { knots } => Calibrator::Isotonic {
                knots: knots.into_iter().map(|[x, y]| (x, y)).collect(),
            },
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ClassRepr {
    id: u32,
    u_thr: f64,
    v_thr: f64,
    model: ModelRepr,
}

#[derive(Serialize, Deserialize)]
struct PipelineRepr {
    objective: Objective,
    classes: Vec<ClassRepr>,
}

impl CalibrationPipeline {
    pub fn to_json(&self) -> String {
        let repr = PipelineRepr {
            objective: self.objective,
            classes: self
                .classes
                .iter()
                .map(|(&id, c)| ClassRepr {
                    id,
                    u_thr: c.u_thr,
                    v_thr: c.v_thr,
                    model: (&c.model).into(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&repr).expect("pipeline serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let repr: PipelineRepr = serde_json::from_str(text)
            .map_err(|e| Error::Validation(format!("invalid pipeline JSON: {e}")))?;
        if let Objective::DEce { tau } = repr.objective {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(Error::Validation(format!("dece objective tau must be in (0, 1), got {tau}")));
            }
        }
        let mut classes = BTreeMap::new();
        for c in repr.classes {
            for (name, thr) in [("u_thr", c.u_thr), ("v_thr", c.v_thr)] {
                if !(0.0..=1.0).contains(&thr) {
                    return Err(Error::Validation(format!(
                        "class {}: {name} {thr} outside [0, 1]",
                        c.id
                    )));
                }
            }
            let model: Calibrator = c.model.into();
            model.validate()?;
            if classes.insert(c.id, ClassCalibration { u_thr: c.u_thr, v_thr: c.v_thr, model }).is_some() {
                return Err(Error::Validation(format!("class {} appears twice", c.id)));
            }
        }
        Ok(CalibrationPipeline { objective: repr.objective, classes })
    }
}

/// (confidence, IoU) pairs per class; unmatched detections carry target 0.
fn iou_pairs_by_class(dataset: &Dataset, matches: &MatchResult) -> BTreeMap<u32, Vec<(f64, f64)>> {
    let mut pairs: BTreeMap<u32, Vec<(f64, f64)>> = BTreeMap::new();
    for (i, d) in dataset.detections().iter().enumerate() {
        pairs.entry(d.category_id).or_default().push((d.score, matches.iou[i]));
    }
    pairs
}

/// Pooled (confidence, TP indicator) pairs for the D-ECE objective,
/// restricted to detections scoring at least [`DECE_PRETHRESHOLD`].
pub(crate) fn dece_pairs(dataset: &Dataset, matches: &MatchResult) -> Vec<(f64, f64)> {
    dataset
        .detections()
        .iter()
        .enumerate()
        .filter(|(_, d)| d.score >= DECE_PRETHRESHOLD)
        .map(|(i, d)| (d.score, matches.is_tp(i) as u8 as f64))
        .collect()
}

/// Fits the full pipeline on a validation set: calibration thresholds by
/// LRP-optimal search at the objective's tau, class-wise calibrator fits on
/// the surviving detections, then operating thresholds re-searched on the
/// calibrated scores. Classes without surviving detections get an identity
/// entry with both thresholds at 0.
pub fn train_pipeline(
    val: &Dataset,
    objective: Objective,
    kind: CalibratorKind,
) -> Result<CalibrationPipeline> {
    if val.detections().is_empty() {
        return Err(Error::Validation("calibration training needs detections in the validation set".into()));
    }
    if let Objective::DEce { tau } = objective {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Validation(format!("dece objective tau must be in (0, 1), got {tau}")));
        }
    }
    let tau = objective.tau();

    let u_thr = lrp_optimal_thresholds(val, tau)?;
    let surviving = val.threshold_detections(&u_thr);
    let matches = match_detections(&surviving, tau)?;

    let mut models: BTreeMap<u32, Calibrator> = BTreeMap::new();
    match objective {
        Objective::LaEce0 => {
            for (class, pairs) in iou_pairs_by_class(&surviving, &matches) {
                models.insert(class, fit(kind, &pairs)?);
            }
        }
        Objective::DEce { .. } => {
            // One pooled fit, stored per class for a uniform data model.
            let pairs = dece_pairs(&surviving, &matches);
            let model = if pairs.is_empty() { Calibrator::Identity } else { fit(kind, &pairs)? };
            for d in surviving.detections() {
                models.entry(d.category_id).or_insert_with(|| model.clone());
            }
        }
    }

    let calibrated_dets: Vec<Detection> = surviving
        .detections()
        .iter()
        .map(|d| {
            let model = models.get(&d.category_id).unwrap_or(&Calibrator::Identity);
            Detection { score: model.apply(d.score), ..d.clone() }
        })
        .collect();
    let calibrated = surviving.with_detections(calibrated_dets)?;
    let v_thr = lrp_optimal_thresholds(&calibrated, tau)?;

    let classes = val
        .category_ids()
        .map(|id| {
            let entry = ClassCalibration {
                u_thr: u_thr[&id],
                v_thr: v_thr[&id],
                model: models.get(&id).cloned().unwrap_or(Calibrator::Identity),
            };
            (id, entry)
        })
        .collect();
    Ok(CalibrationPipeline { objective, classes })
}

/// Result of running a pipeline over a detection set.
#[derive(Debug, Clone)]
pub struct ApplyOutcome {
    pub dataset: Dataset,
    /// Classes that had detections but no pipeline entry; they passed
    /// through untouched under the identity default.
    pub missing_classes: Vec<u32>,
}

/// Applies a fitted pipeline: per detection, drop if the raw score is below
/// the class's calibration threshold, replace the score by the calibrated
/// one, then drop if that falls below the operating threshold. Boxes and
/// classes are untouched.
pub fn apply_pipeline(pipeline: &CalibrationPipeline, test: &Dataset) -> Result<ApplyOutcome> {
    let mut missing = Vec::new();
    let mut kept = Vec::new();
    for d in test.detections() {
        match pipeline.classes.get(&d.category_id) {
            None => {
                if !missing.contains(&d.category_id) {
                    missing.push(d.category_id);
                }
                kept.push(d.clone());
            }
            Some(entry) => {
                if d.score < entry.u_thr {
                    continue;
                }
                let score = entry.model.apply(d.score);
                if score < entry.v_thr {
                    continue;
                }
                kept.push(Detection { score, ..d.clone() });
            }
        }
    }
    missing.sort_unstable();
    let dataset = test.with_detections(kept)?;
    Ok(ApplyOutcome { dataset, missing_classes: missing })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Category, GroundTruth};
    use crate::geometry::BBox;

    fn unit_gt(image_id: u64, class: u32, x: f64) -> GroundTruth {
        GroundTruth { image_id, category_id: class, bbox: BBox::new(x, 0.0, x + 10.0, 10.0) }
    }

    fn slab_det(image_id: u64, class: u32, x: f64, iou: f64, score: f64) -> Detection {
        Detection {
            image_id,
            category_id: class,
            bbox: BBox::new(x, 0.0, x + 10.0, 10.0 * iou),
            score,
        }
    }

    fn dataset(
        images: Vec<u64>,
        classes: Vec<u32>,
        gt: Vec<GroundTruth>,
        dets: Vec<Detection>,
    ) -> Dataset {
        let categories = classes
            .into_iter()
            .map(|id| Category { id, name: format!("c{id}") })
            .collect();
        Dataset::new(images, categories, gt, dets).unwrap()
    }

    fn grid(n: usize) -> Vec<f64> {
        (1..n).map(|i| i as f64 / n as f64).collect()
    }

    #[test]
    fn identity_leaves_confidences_alone() {
        for p in [0.0, 0.25, 0.5, 1.0] {
            assert_eq!(Calibrator::Identity.apply(p), p);
        }
    }

    #[test]
    fn temperature_two_halves_the_logit() {
        // logit(0.9) = ln 9, halved is ln 3, so the output is 3/4.
        let ts = Calibrator::Temperature { t: 2.0 };
        assert!((ts.apply(0.9) - 0.75).abs() < 1e-12);
        let unit = Calibrator::Temperature { t: 1.0 };
        assert!((unit.apply(0.3) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn platt_with_unit_parameters_is_the_identity_up_to_clamping() {
        let ps = Calibrator::Platt { a: 1.0, b: 0.0 };
        for p in grid(20) {
            assert!((ps.apply(p) - p).abs() < 1e-12);
        }
        assert!(ps.apply(0.0) < 1e-6);
        assert!(ps.apply(1.0) > 1.0 - 1e-6);
    }

    #[test]
    fn fit_temperature_recovers_a_planted_temperature() {
        let pairs: Vec<(f64, f64)> = grid(200)
            .into_iter()
            .map(|p| (p, sigmoid(logit(p) / 2.0)))
            .collect();
        match fit_temperature(&pairs).unwrap() {
            Calibrator::Temperature { t } => assert!((t - 2.0).abs() < 1e-4, "t = {t}"),
            other => panic!("expected temperature, got {other:?}"),
        }
    }

    #[test]
    fn fit_temperature_sees_no_miscalibration_in_self_consistent_targets() {
        let pairs: Vec<(f64, f64)> = grid(100).into_iter().map(|p| (p, p)).collect();
        match fit_temperature(&pairs).unwrap() {
            Calibrator::Temperature { t } => assert!((t - 1.0).abs() < 1e-3, "t = {t}"),
            other => panic!("expected temperature, got {other:?}"),
        }
    }

    #[test]
    fn fit_platt_recovers_scale_and_shift() {
        let pairs: Vec<(f64, f64)> = grid(500)
            .into_iter()
            .map(|p| (p, sigmoid(2.0 * logit(p) + 0.5)))
            .collect();
        match fit_platt(&pairs).unwrap() {
            Calibrator::Platt { a, b } => {
                assert!((a - 2.0).abs() < 1e-3, "a = {a}");
                assert!((b - 0.5).abs() < 1e-3, "b = {b}");
            }
            other => panic!("expected platt, got {other:?}"),
        }
    }

    #[test]
    fn fit_platt_is_near_identity_on_self_consistent_targets() {
        let pairs: Vec<(f64, f64)> = grid(100).into_iter().map(|p| (p, p)).collect();
        match fit_platt(&pairs).unwrap() {
            Calibrator::Platt { a, b } => {
                assert!((a - 1.0).abs() < 1e-3, "a = {a}");
                assert!(b.abs() < 1e-3, "b = {b}");
            }
            other => panic!("expected platt, got {other:?}"),
        }
    }

    #[test]
    fn fit_platt_drives_all_zero_targets_to_zero() {
        let pairs: Vec<(f64, f64)> = grid(50).into_iter().map(|p| (p, 0.0)).collect();
        let model = fit_platt(&pairs).unwrap();
        match &model {
            Calibrator::Platt { a, .. } => assert!(*a >= 0.0),
            other => panic!("expected platt, got {other:?}"),
        }
        let mean: f64 = pairs.iter().map(|&(p, _)| model.apply(p)).sum::<f64>() / pairs.len() as f64;
        assert!(mean < 1e-3, "mean calibrated output {mean}");
    }

    #[test]
    fn fit_platt_beats_temperature_when_targets_are_shifted() {
        let pairs: Vec<(f64, f64)> = grid(200)
            .into_iter()
            .map(|p| (p, sigmoid(logit(p) + 1.0)))
            .collect();
        let platt = fit_platt(&pairs).unwrap();
        let ts = fit_temperature(&pairs).unwrap();
        assert!(platt.mean_nll(&pairs) < ts.mean_nll(&pairs) - 1e-6);
    }

    #[test]
    fn logit_fits_fall_back_to_identity_on_degenerate_pairs() {
        assert_eq!(fit_platt(&[(0.5, 0.7)]).unwrap(), Calibrator::Identity);
        assert_eq!(fit_temperature(&[]).unwrap(), Calibrator::Identity);
        let constant = [(0.4, 0.1), (0.4, 0.9), (0.4, 0.5)];
        assert_eq!(fit_platt(&constant).unwrap(), Calibrator::Identity);
        assert_eq!(fit_temperature(&constant).unwrap(), Calibrator::Identity);
    }

    #[test]
    fn fits_reject_out_of_range_pairs() {
        assert!(fit_platt(&[(1.5, 0.5), (0.2, 0.1)]).is_err());
        assert!(fit_temperature(&[(0.5, -0.1), (0.2, 0.1)]).is_err());
        assert!(fit_isotonic(&[(f64::NAN, 0.5)]).is_err());
    }

    #[test]
    fn fit_isotonic_keeps_already_isotone_pairs() {
        let model = fit_isotonic(&[(0.2, 0.1), (0.5, 0.4), (0.9, 0.8)]).unwrap();
        assert_eq!(
            model,
            Calibrator::Isotonic { knots: vec![(0.2, 0.1), (0.5, 0.4), (0.9, 0.8)] }
        );
        assert!((model.apply(0.5) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn fit_isotonic_pools_a_violating_pair() {
        let model = fit_isotonic(&[(0.2, 0.5), (0.4, 0.3)]).unwrap();
        assert_eq!(model, Calibrator::Isotonic { knots: vec![(0.2, 0.4), (0.4, 0.4)] });
        assert!((model.apply(0.2) - 0.4).abs() < 1e-12);
        assert!((model.apply(0.4) - 0.4).abs() < 1e-12);
        // Between equal knots the interpolation is flat.
        assert!((model.apply(0.3) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn fit_isotonic_pools_only_the_violating_run() {
        let model = fit_isotonic(&[(0.2, 0.1), (0.4, 0.5), (0.6, 0.4), (0.9, 0.8)]).unwrap();
        match &model {
            Calibrator::Isotonic { knots } => {
                let ys: Vec<f64> = knots.iter().map(|k| k.1).collect();
                assert_eq!(ys, vec![0.1, 0.45, 0.45, 0.8]);
            }
            other => panic!("expected isotonic, got {other:?}"),
        }
        assert!((model.apply(0.5) - 0.45).abs() < 1e-12);
        // Linear between the first two knots, constant outside the range.
        assert!((model.apply(0.3) - 0.275).abs() < 1e-12);
        assert_eq!(model.apply(0.05), 0.1);
        assert_eq!(model.apply(0.95), 0.8);
    }

    #[test]
    fn fit_isotonic_averages_equal_confidences_first() {
        let model = fit_isotonic(&[(0.5, 0.0), (0.5, 1.0)]).unwrap();
        assert_eq!(model, Calibrator::Isotonic { knots: vec![(0.5, 0.5)] });
        assert_eq!(model.apply(0.1), 0.5);
        assert_eq!(model.apply(0.9), 0.5);
    }

    #[test]
    fn fit_isotonic_needs_at_least_one_pair() {
        assert!(matches!(fit_isotonic(&[]), Err(Error::Validation(_))));
    }

    #[test]
    fn per_pair_cross_entropy_is_minimized_at_the_target() {
        // Scanning the calibrated output for one pair bottoms out where the
        // prediction equals the target.
        for &target in &[0.0, 0.3, 0.5, 0.9] {
            let loss = |q: f64| {
                let q = q.clamp(CONF_EPS, 1.0 - CONF_EPS);
                -(target * q.ln() + (1.0 - target) * (1.0 - q).ln())
            };
            let best = (0..=1000)
                .map(|i| i as f64 / 1000.0)
                .min_by(|&a, &b| loss(a).total_cmp(&loss(b)))
                .unwrap();
            assert!((best - target).abs() <= 1e-3, "target {target} best {best}");
        }
    }

    #[test]
    fn pipeline_json_round_trips_every_model_kind() {
        let mut classes = BTreeMap::new();
        classes.insert(1, ClassCalibration { u_thr: 0.1, v_thr: 0.2, model: Calibrator::Identity });
        classes.insert(
            2,
            ClassCalibration {
                u_thr: 0.0,
                v_thr: 0.0,
                model: Calibrator::Temperature { t: 1.7320508075688772 },
            },
        );
        classes.insert(
            5,
            ClassCalibration {
                u_thr: 0.25,
                v_thr: 0.5,
                model: Calibrator::Platt { a: 2.220446049250313e-16, b: -3.5 },
            },
        );
        classes.insert(
            9,
            ClassCalibration {
                u_thr: 1.0,
                v_thr: 1.0,
                model: Calibrator::Isotonic { knots: vec![(0.1, 0.05), (0.3, 0.05), (0.9, 1.0)] },
            },
        );
        let pipeline = CalibrationPipeline { objective: Objective::DEce { tau: 0.5 }, classes };
        let text = pipeline.to_json();
        let back = CalibrationPipeline::from_json(&text).unwrap();
        assert_eq!(back, pipeline);

        let laece0 = CalibrationPipeline { objective: Objective::LaEce0, classes: BTreeMap::new() };
        assert_eq!(CalibrationPipeline::from_json(&laece0.to_json()).unwrap(), laece0);
    }

    #[test]
    fn pipeline_json_rejects_broken_models() {
        let bad = [
            r#"{"objective":{"kind":"laece0"},"classes":[{"id":1,"u_thr":0.0,"v_thr":0.0,"model":{"kind":"temperature","params":[0.0]}}]}"#,
            r#"{"objective":{"kind":"laece0"},"classes":[{"id":1,"u_thr":0.0,"v_thr":0.0,"model":{"kind":"platt","params":[-1.0,0.0]}}]}"#,
            r#"{"objective":{"kind":"laece0"},"classes":[{"id":1,"u_thr":0.0,"v_thr":0.0,"model":{"kind":"isotonic","knots":[[0.5,0.1],[0.2,0.3]]}}]}"#,
            r#"{"objective":{"kind":"laece0"},"classes":[{"id":1,"u_thr":1.5,"v_thr":0.0,"model":{"kind":"identity"}}]}"#,
            r#"{"objective":{"kind":"dece","tau":0.0},"classes":[]}"#,
            r#"{"objective":{"kind":"laece0"},"classes":[{"id":1,"u_thr":0.0,"v_thr":0.0,"model":{"kind":"identity"}},{"id":1,"u_thr":0.0,"v_thr":0.0,"model":{"kind":"identity"}}]}"#,
        ];
        for text in bad {
            assert!(CalibrationPipeline::from_json(text).is_err(), "accepted: {text}");
        }
    }

    #[test]
    fn dece_pairs_keep_only_scores_above_the_fixed_cutoff() {
        let ds = dataset(
            vec![1],
            vec![1, 2],
            vec![unit_gt(1, 1, 0.0), unit_gt(1, 2, 100.0)],
            vec![
                slab_det(1, 1, 0.0, 1.0, 0.8),
                slab_det(1, 2, 100.0, 1.0, 0.5),
                slab_det(1, 1, 500.0, 1.0, 0.29),
                slab_det(1, 2, 600.0, 1.0, 0.2),
            ],
        );
        let m = match_detections(&ds, 0.5).unwrap();
        let pairs = dece_pairs(&ds, &m);
        assert_eq!(pairs, vec![(0.8, 1.0), (0.5, 1.0)]);
    }

    #[test]
    fn train_pipeline_covers_every_registry_class() {
        // Class 1 is already calibrated (score = IoU); class 2 has ground
        // truth but no detections and must get the identity default.
        let dets = vec![
            slab_det(1, 1, 0.0, 0.9, 0.9),
            slab_det(1, 1, 100.0, 0.7, 0.7),
            slab_det(2, 1, 0.0, 0.5, 0.5),
            slab_det(2, 1, 100.0, 0.3, 0.3),
        ];
        let gt = vec![
            unit_gt(1, 1, 0.0),
            unit_gt(1, 1, 100.0),
            unit_gt(2, 1, 0.0),
            unit_gt(2, 1, 100.0),
            unit_gt(1, 2, 300.0),
        ];
        let ds = dataset(vec![1, 2], vec![1, 2], gt, dets);
        let pipeline = train_pipeline(&ds, Objective::LaEce0, CalibratorKind::Isotonic).unwrap();
        assert_eq!(pipeline.classes.len(), 2);
        let c2 = &pipeline.classes[&2];
        assert_eq!(c2.model, Calibrator::Identity);
        assert_eq!((c2.u_thr, c2.v_thr), (0.0, 0.0));
        // Perfectly calibrated input: the isotonic fit is the identity on
        // its knots.
        match &pipeline.classes[&1].model {
            Calibrator::Isotonic { knots } => {
                for &(x, y) in knots {
                    assert!((x - y).abs() < 1e-12);
                }
            }
            other => panic!("expected isotonic, got {other:?}"),
        }
    }

    #[test]
    fn train_pipeline_requires_detections() {
        let ds = dataset(vec![1], vec![1], vec![unit_gt(1, 1, 0.0)], vec![]);
        assert!(matches!(
            train_pipeline(&ds, Objective::LaEce0, CalibratorKind::Isotonic),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn train_pipeline_validates_the_dece_tau() {
        let ds = dataset(
            vec![1],
            vec![1],
            vec![unit_gt(1, 1, 0.0)],
            vec![slab_det(1, 1, 0.0, 1.0, 0.9)],
        );
        assert!(train_pipeline(&ds, Objective::DEce { tau: 0.0 }, CalibratorKind::Platt).is_err());
        assert!(train_pipeline(&ds, Objective::DEce { tau: 1.0 }, CalibratorKind::Platt).is_err());
        assert!(train_pipeline(&ds, Objective::DEce { tau: 0.5 }, CalibratorKind::Platt).is_ok());
    }

    #[test]
    fn apply_pipeline_thresholds_calibrates_then_thresholds_again() {
        let mut classes = BTreeMap::new();
        // Temperature 0.5 sharpens: 0.6 maps to sigmoid(2 logit 0.6) ~ 0.692.
        classes.insert(
            1,
            ClassCalibration { u_thr: 0.5, v_thr: 0.7, model: Calibrator::Temperature { t: 0.5 } },
        );
        let pipeline = CalibrationPipeline { objective: Objective::LaEce0, classes };

        let ds = dataset(
            vec![1],
            vec![1, 2],
            vec![],
            vec![
                slab_det(1, 1, 0.0, 1.0, 0.4),
                slab_det(1, 1, 100.0, 1.0, 0.6),
                slab_det(1, 1, 200.0, 1.0, 0.8),
                slab_det(1, 2, 300.0, 1.0, 0.1),
            ],
        );
        let outcome = apply_pipeline(&pipeline, &ds).unwrap();
        assert_eq!(outcome.missing_classes, vec![2]);

        let survivors = outcome.dataset.detections();
        assert_eq!(survivors.len(), 2);
        // 0.4 fell to u_thr; 0.6 calibrated to ~0.692 and fell to v_thr;
        // 0.8 calibrated to sigmoid(2 logit 0.8) = 16/17; class 2 untouched.
        assert_eq!(survivors[0].category_id, 1);
        assert!((survivors[0].score - 16.0 / 17.0).abs() < 1e-12);
        assert_eq!(survivors[1].category_id, 2);
        assert_eq!(survivors[1].score, 0.1);
    }

    #[test]
    fn apply_pipeline_with_identity_entries_is_a_no_op() {
        let ds = dataset(
            vec![1],
            vec![1],
            vec![unit_gt(1, 1, 0.0)],
            vec![slab_det(1, 1, 0.0, 1.0, 0.9), slab_det(1, 1, 500.0, 1.0, 0.2)],
        );
        let mut classes = BTreeMap::new();
        classes.insert(1, ClassCalibration { u_thr: 0.0, v_thr: 0.0, model: Calibrator::Identity });
        let pipeline = CalibrationPipeline { objective: Objective::LaEce0, classes };
        let outcome = apply_pipeline(&pipeline, &ds).unwrap();
        assert_eq!(outcome.dataset, ds);
        assert!(outcome.missing_classes.is_empty());
    }

    #[test]
    fn apply_pipeline_can_remove_a_class_entirely() {
        let ds = dataset(
            vec![1],
            vec![1],
            vec![],
            vec![slab_det(1, 1, 0.0, 1.0, 0.9), slab_det(1, 1, 100.0, 1.0, 0.99)],
        );
        let mut classes = BTreeMap::new();
        classes.insert(1, ClassCalibration { u_thr: 1.0, v_thr: 0.0, model: Calibrator::Identity });
        let pipeline = CalibrationPipeline { objective: Objective::LaEce0, classes };
        let outcome = apply_pipeline(&pipeline, &ds).unwrap();
        assert!(outcome.dataset.detections().is_empty());
    }

    #[test]
    fn trained_pipeline_preserves_within_class_ranking() {
        // Overconfident detector: scores are IoU^(1/3).
        let mut gt = Vec::new();
        let mut dets = Vec::new();
        for i in 0..40u64 {
            let iou = 0.3 + 0.6 * (i as f64 / 39.0);
            gt.push(unit_gt(i, 1, 0.0));
            dets.push(slab_det(i, 1, 0.0, iou, iou.powf(1.0 / 3.0)));
        }
        let ds = dataset((0..40).collect(), vec![1], gt, dets);
        for kind in [CalibratorKind::Temperature, CalibratorKind::Platt, CalibratorKind::Isotonic] {
            let pipeline = train_pipeline(&ds, Objective::LaEce0, kind).unwrap();
            let outcome = apply_pipeline(&pipeline, &ds).unwrap();
            let scores: Vec<f64> =
                outcome.dataset.detections().iter().map(|d| d.score).collect();
            // Canonical order is descending raw score; a monotone map must
            // keep the calibrated sequence nonincreasing.
            for w in scores.windows(2) {
                assert!(w[0] >= w[1], "ranking broken for {kind:?}: {w:?}");
            }
        }
    }
}
