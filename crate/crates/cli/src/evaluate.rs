//! The evaluate subcommand: one report covering LRP (with components), AP
//! and the four calibration error measures, overall and per class.

use std::collections::BTreeMap;

use serde::Serialize;

use detcal::accuracy::{average_precision, lrp, lrp_optimal_thresholds, lrp_per_class};
use detcal::calmetrics::{d_ece, la_ace0, la_ece, la_ece0};
use detcal::dataset::Dataset;
use detcal::matching::match_detections;
use detcal::Result;

use crate::args::{EvaluateArgs, Format};
use crate::inputs::{load_pair, resolve_tau};
use crate::output::{csv_cell, metric_or_reason, to_pretty_json, write_output, MetricValue};

#[derive(Serialize)]
struct ConfigEcho {
    gt: String,
    dets: String,
    tau: f64,
    d_ece_bins: usize,
    la_ece_bins: usize,
    top_k: usize,
    auto_threshold: bool,
    seed: Option<u64>,
}

#[derive(Serialize)]
struct Counts {
    images: usize,
    categories: usize,
    ground_truth: usize,
    detections: usize,
}

#[derive(Serialize)]
struct LrpBlock {
    value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    loc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fp: Option<f64>,
    #[serde(rename = "fn", skip_serializing_if = "Option::is_none")]
    fn_: Option<f64>,
    n_tp: usize,
    n_fp: usize,
    n_fn: usize,
}

impl LrpBlock {
    fn from(r: &detcal::accuracy::LrpResult) -> Self {
        if r.defined {
            Self {
                value: Some(r.lrp),
                reason: None,
                loc: Some(r.lrp_loc),
                fp: Some(r.lrp_fp),
                fn_: Some(r.lrp_fn),
                n_tp: r.n_tp,
                n_fp: r.n_fp,
                n_fn: r.n_fn,
            }
        } else {
            Self {
                value: None,
                reason: Some("no ground truth and no detections".into()),
                loc: None,
                fp: None,
                fn_: None,
                n_tp: 0,
                n_fp: 0,
                n_fn: 0,
            }
        }
    }
}

#[derive(Default, Serialize)]
struct PerClassRow {
    #[serde(skip_serializing_if = "Option::is_none")]
    lrp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    la_ece: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    la_ece0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    la_ace0: Option<f64>,
}

#[derive(Serialize)]
struct Report {
    config: ConfigEcho,
    counts: Counts,
    lrp: LrpBlock,
    ap: MetricValue,
    d_ece: MetricValue,
    la_ece: MetricValue,
    la_ece0: MetricValue,
    la_ace0: MetricValue,
    per_class: BTreeMap<u32, PerClassRow>,
}

pub fn run(args: EvaluateArgs, seed: Option<u64>) -> Result<()> {
    let tau = resolve_tau(args.tau, 0.5)?;
    let d_ece_bins = args.bins.unwrap_or(10);
    let la_ece_bins = args.bins.unwrap_or(25);

    let mut dataset = load_pair(&args.gt, &args.dets, args.top_k)?;
    if args.auto_threshold {
        // Flag constraints guarantee both validation paths are present.
        let val = load_pair(
            args.val_gt.as_ref().expect("clap requires --val-gt"),
            args.val_dets.as_ref().expect("clap requires --val-dets"),
            args.top_k,
        )?;
        let thresholds = lrp_optimal_thresholds(&val, tau)?;
        dataset = dataset.threshold_detections(&thresholds);
    }

    let report = build_report(&dataset, tau, d_ece_bins, la_ece_bins)?;
    let report = Report {
        config: ConfigEcho {
            gt: args.gt.display().to_string(),
            dets: args.dets.display().to_string(),
            tau,
            d_ece_bins,
            la_ece_bins,
            top_k: args.top_k,
            auto_threshold: args.auto_threshold,
            seed,
        },
        counts: Counts {
            images: dataset.images().len(),
            categories: dataset.categories().len(),
            ground_truth: dataset.ground_truth().len(),
            detections: dataset.detections().len(),
        },
        ..report
    };

    let rendered = match args.format {
        Format::Json => to_pretty_json(&report),
        Format::Csv => to_csv(&report),
    };
    write_output(&args.out, &rendered)
}

/// Metric portion of the report; config and counts are filled by the caller.
fn build_report(dataset: &Dataset, tau: f64, d_ece_bins: usize, la_ece_bins: usize) -> Result<Report> {
    let matches = match_detections(dataset, tau)?;
    let zero_matches = match_detections(dataset, 0.0)?;

    let overall_lrp = lrp(dataset, &matches, tau)?;
    let per_class_lrp = lrp_per_class(dataset, &matches, tau)?;

    let (ap, ap_report) = metric_or_reason(average_precision(dataset, &matches), |r| r.mean)?;

    let needs_positive_tau = "undefined at tau = 0; rerun with --tau above 0";
    let (d_ece, _) = if tau > 0.0 {
        metric_or_reason(d_ece(dataset, &matches, d_ece_bins), |r| r.value)?
    } else {
        (MetricValue::undefined(needs_positive_tau), None)
    };
    let (la_ece, la_ece_report) = if tau > 0.0 {
        metric_or_reason(la_ece(dataset, &matches, la_ece_bins), |r| r.value)?
    } else {
        (MetricValue::undefined(needs_positive_tau), None)
    };
    let (la_ece0, la_ece0_report) =
        metric_or_reason(la_ece0(dataset, &zero_matches, la_ece_bins), |r| r.value)?;
    let (la_ace0, la_ace0_report) = metric_or_reason(la_ace0(dataset, &zero_matches), |r| r.value)?;

    let mut per_class: BTreeMap<u32, PerClassRow> = BTreeMap::new();
    for (class, r) in &per_class_lrp {
        if r.defined {
            per_class.entry(*class).or_default().lrp = Some(r.lrp);
        }
    }
    if let Some(r) = &ap_report {
        for (class, v) in &r.per_class {
            per_class.entry(*class).or_default().ap = Some(*v);
        }
    }
    let fills: [(Option<&detcal::calmetrics::CalibrationReport>, fn(&mut PerClassRow) -> &mut Option<f64>); 3] = [
        (la_ece_report.as_ref(), |row| &mut row.la_ece),
        (la_ece0_report.as_ref(), |row| &mut row.la_ece0),
        (la_ace0_report.as_ref(), |row| &mut row.la_ace0),
    ];
    for (report, field) in fills {
        if let Some(r) = report {
            for (class, v) in &r.per_class {
                *field(per_class.entry(*class).or_default()) = Some(*v);
            }
        }
    }

    Ok(Report {
        config: ConfigEcho {
            gt: String::new(),
            dets: String::new(),
            tau,
            d_ece_bins,
            la_ece_bins,
            top_k: 0,
            auto_threshold: false,
            seed: None,
        },
        counts: Counts { images: 0, categories: 0, ground_truth: 0, detections: 0 },
        lrp: LrpBlock::from(&overall_lrp),
        ap,
        d_ece,
        la_ece,
        la_ece0,
        la_ace0,
        per_class,
    })
}

fn to_csv(report: &Report) -> String {
    let mut out = String::from("metric,class,value\n");
    let mut push = |metric: &str, class: &str, value: Option<f64>| {
        out.push_str(&format!("{metric},{class},{}\n", csv_cell(value)));
    };
    push("lrp", "", report.lrp.value);
    push("lrp_loc", "", report.lrp.loc);
    push("lrp_fp", "", report.lrp.fp);
    push("lrp_fn", "", report.lrp.fn_);
    push("ap", "", report.ap.value);
    push("d_ece", "", report.d_ece.value);
    push("la_ece", "", report.la_ece.value);
    push("la_ece0", "", report.la_ece0.value);
    push("la_ace0", "", report.la_ace0.value);
    for (class, row) in &report.per_class {
        let class = class.to_string();
        push("lrp", &class, row.lrp);
        push("ap", &class, row.ap);
        push("la_ece", &class, row.la_ece);
        push("la_ece0", &class, row.la_ece0);
        push("la_ace0", &class, row.la_ace0);
    }
    out
}
