//! The sweep subcommand: every metric evaluated across a grid of score
//! thresholds, one row per operating point.

use std::collections::BTreeMap;

use serde::Serialize;

use detcal::accuracy::{average_precision, lrp};
use detcal::calmetrics::{d_ece, la_ace0, la_ece, la_ece0};
use detcal::dataset::Dataset;
use detcal::matching::match_detections;
use detcal::{Error, Result};

use crate::args::{Format, SweepArgs};
use crate::inputs::{load_pair, resolve_tau};
use crate::output::{csv_cell, to_pretty_json, write_output};

#[derive(Serialize)]
struct SweepRow {
    threshold: f64,
    d_ece: Option<f64>,
    la_ece: Option<f64>,
    la_ece0: Option<f64>,
    la_ace0: Option<f64>,
    lrp: Option<f64>,
    ap: Option<f64>,
}

pub fn run(args: SweepArgs) -> Result<()> {
    if !(args.step > 0.0 && args.step.is_finite()) {
        return Err(Error::Validation(format!("step must be positive, got {}", args.step)));
    }
    let tau = resolve_tau(args.tau, 0.5)?;
    let d_ece_bins = args.bins.unwrap_or(10);
    let la_ece_bins = args.bins.unwrap_or(25);
    let dataset = load_pair(&args.gt, &args.dets, args.top_k)?;

    let mut rows = Vec::new();
    let mut k = 0u64;
    loop {
        let threshold = k as f64 * args.step;
        if threshold >= 1.0 {
            break;
        }
        rows.push(evaluate_at(&dataset, threshold, tau, d_ece_bins, la_ece_bins)?);
        k += 1;
    }
    rows.push(evaluate_at(&dataset, 1.0, tau, d_ece_bins, la_ece_bins)?);

    let rendered = match args.format {
        Format::Csv => to_csv(&rows),
        Format::Json => to_pretty_json(&rows),
    };
    write_output(&args.out, &rendered)
}

fn evaluate_at(
    dataset: &Dataset,
    threshold: f64,
    tau: f64,
    d_ece_bins: usize,
    la_ece_bins: usize,
) -> Result<SweepRow> {
    let cut: BTreeMap<u32, f64> = dataset.category_ids().map(|c| (c, threshold)).collect();
    let sub = dataset.threshold_detections(&cut);
    let matches = match_detections(&sub, tau)?;
    let zero_matches = match_detections(&sub, 0.0)?;

    // A metric that does not exist at this operating point leaves an
    // empty cell; real errors abort the sweep.
    fn value<T>(result: Result<T>, extract: impl Fn(&T) -> f64) -> Result<Option<f64>> {
        match result {
            Ok(r) => Ok(Some(extract(&r))),
            Err(Error::Undefined(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    let lrp_result = lrp(&sub, &matches, tau)?;
    Ok(SweepRow {
        threshold,
        d_ece: if tau > 0.0 { value(d_ece(&sub, &matches, d_ece_bins), |r| r.value)? } else { None },
        la_ece: if tau > 0.0 { value(la_ece(&sub, &matches, la_ece_bins), |r| r.value)? } else { None },
        la_ece0: value(la_ece0(&sub, &zero_matches, la_ece_bins), |r| r.value)?,
        la_ace0: value(la_ace0(&sub, &zero_matches), |r| r.value)?,
        lrp: lrp_result.defined.then_some(lrp_result.lrp),
        ap: value(average_precision(&sub, &matches), |r| r.mean)?,
    })
}

fn to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("threshold,d_ece,la_ece,la_ece0,la_ace0,lrp,ap\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.threshold,
            csv_cell(r.d_ece),
            csv_cell(r.la_ece),
            csv_cell(r.la_ece0),
            csv_cell(r.la_ace0),
            csv_cell(r.lrp),
            csv_cell(r.ap),
        ));
    }
    out
}
