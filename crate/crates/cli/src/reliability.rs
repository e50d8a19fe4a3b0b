//! The reliability subcommand: per-bin confidence/target rows for one
//! calibration measure, ready for plotting.

use detcal::calmetrics::{d_ece, la_ece, la_ece0, reliability_data, ReliabilityRow};
use detcal::matching::match_detections;
use detcal::{Error, Result};

use crate::args::{Format, MeasureArg, ReliabilityArgs};
use crate::inputs::{load_pair, resolve_tau};
use crate::output::{to_pretty_json, write_output};

pub fn run(args: ReliabilityArgs) -> Result<()> {
    let bins = args.bins.unwrap_or(match args.measure {
        MeasureArg::DEce => 10,
        MeasureArg::LaEce | MeasureArg::LaEce0 => 25,
    });
    let tau = match args.measure {
        MeasureArg::DEce | MeasureArg::LaEce => resolve_tau(args.tau, 0.5)?,
        MeasureArg::LaEce0 => match args.tau {
            None | Some(0.0) => 0.0,
            Some(t) => {
                return Err(Error::Validation(format!(
                    "la_ece0 is defined at tau = 0; got --tau {t}"
                )))
            }
        },
    };

    let dataset = load_pair(&args.gt, &args.dets, args.top_k)?;
    let matches = match_detections(&dataset, tau)?;
    let report = match args.measure {
        MeasureArg::DEce => d_ece(&dataset, &matches, bins)?,
        MeasureArg::LaEce => la_ece(&dataset, &matches, bins)?,
        MeasureArg::LaEce0 => la_ece0(&dataset, &matches, bins)?,
    };
    let rows = reliability_data(&report);

    let rendered = match args.format {
        Format::Csv => to_csv(&rows),
        Format::Json => to_pretty_json(&rows),
    };
    write_output(&args.out, &rendered)
}

fn to_csv(rows: &[ReliabilityRow]) -> String {
    let mut out = String::from("bin_low,bin_high,count,mean_conf,target\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.bin_low, r.bin_high, r.count, r.mean_confidence, r.target
        ));
    }
    out
}
