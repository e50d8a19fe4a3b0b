//! Output plumbing shared by the subcommands: writing to stdout or a file,
//! rendering errors, and the null-with-reason wrapper for metrics that are
//! undefined on the given input.

use std::path::PathBuf;

use serde::Serialize;

use detcal::{Error, Result};

/// A metric value, or null plus the reason it does not exist here.
#[derive(Debug, Clone, Serialize)]
pub struct MetricValue {
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl MetricValue {
    pub fn defined(value: f64) -> Self {
        Self { value: Some(value), reason: None }
    }

    pub fn undefined(reason: impl Into<String>) -> Self {
        Self { value: None, reason: Some(reason.into()) }
    }
}

/// Unwraps a metric computation, turning only `Undefined` into a null
/// value; real errors still propagate.
pub fn metric_or_reason<T>(result: Result<T>, value: impl Fn(&T) -> f64) -> Result<(MetricValue, Option<T>)> {
    match result {
        Ok(report) => Ok((MetricValue::defined(value(&report)), Some(report))),
        Err(Error::Undefined(reason)) => Ok((MetricValue::undefined(reason), None)),
        Err(e) => Err(e),
    }
}

/// An empty CSV cell for an undefined value, shortest round-trip otherwise.
pub fn csv_cell(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_output(out: &Option<PathBuf>, content: &str) -> Result<()> {
    match out {
        None => {
            print!("{content}");
            Ok(())
        }
        Some(path) => std::fs::write(path, content).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        }),
    }
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report serialization cannot fail");
    text.push('\n');
    text
}

/// 2 for problems with the input, 1 for internal failures.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Io { .. } | Error::Parse { .. } | Error::Validation(_) | Error::Undefined(_) => 2,
        Error::TauMismatch { .. } | Error::Optimization(_) => 1,
    }
}

pub fn report_error(error: &Error, json: bool) {
    if json {
        let kind = match error {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Undefined(_) => "undefined",
            Error::TauMismatch { .. } => "internal",
            Error::Optimization(_) => "optimization",
        };
        let body = serde_json::json!({ "error": { "kind": kind, "message": error.to_string() } });
        eprintln!("{body}");
    } else {
        eprintln!("error: {error}");
    }
}
