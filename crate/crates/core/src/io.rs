//! Serialization of reports, studies and campaign logs.
//!
//! JSON numbers are written in scientific notation with 17 significant
//! digits (non-finite values become `null`); CSV tables use 5.

use std::io;

use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};

use crate::adaptivity::RefinementStageLog;
use crate::error::Result;
use crate::estimate::ErrorReport;
use crate::experiments::ConvergenceStudy;

enum Layout {
    Compact(CompactFormatter),
    Pretty(PrettyFormatter<'static>),
}

/// Delegates layout to serde_json and only changes how floats are written.
struct SciFormatter(Layout);

macro_rules! delegate {
    ($($name:ident),*) => {
        $(
            fn $name<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
                match &mut self.0 {
                    Layout::Compact(f) => f.$name(w),
                    Layout::Pretty(f) => f.$name(w),
                }
            }
        )*
    };
}

macro_rules! delegate_first {
    ($($name:ident),*) => {
        $(
            fn $name<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
                match &mut self.0 {
                    Layout::Compact(f) => f.$name(w, first),
                    Layout::Pretty(f) => f.$name(w, first),
                }
            }
        )*
    };
}

impl Formatter for SciFormatter {
    delegate!(begin_array, end_array, end_array_value, begin_object, end_object, end_object_key, begin_object_value, end_object_value);
    delegate_first!(begin_array_value, begin_object_key);

    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        write!(w, "{:.16e}", f64::from(value))
    }
}

fn write_json<T: Serialize + ?Sized>(value: &T, layout: Layout) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SciFormatter(layout));
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

/// One-line JSON.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    write_json(value, Layout::Compact(CompactFormatter))
}

/// Indented JSON.
pub fn to_json_pretty<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    write_json(value, Layout::Pretty(PrettyFormatter::new()))
}

/// `x` with 5 significant digits.
pub fn fmt5(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.4e}")
    } else {
        "NaN".to_string()
    }
}

fn opt(x: Option<f64>) -> f64 {
    x.unwrap_or(f64::NAN)
}

fn write_csv(rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(r).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("writing to memory")).expect("CSV fields are UTF-8")
}

/// Column names of a report row, one spatial column per partition.
pub fn report_columns(report: &ErrorReport) -> Vec<String> {
    let mut cols = vec!["goal".to_string(), "reference_error".into(), "time_error".into()];
    cols.extend(report.partition_names.iter().map(|n| format!("space_error_{n}")));
    cols.extend(["estimated_error".to_string(), "accuracy".into()]);
    cols
}

fn report_values(report: &ErrorReport) -> Vec<f64> {
    let mut v = vec![report.psi_ref.unwrap_or(report.psi_num), opt(report.e_ref), report.e_time];
    v.extend(&report.e_space);
    v.extend([report.e_total, opt(report.accuracy)]);
    v
}

/// Header and one row: goal (reference goal when available), reference
/// error, time error, one spatial error per partition, total, accuracy.
pub fn report_csv(report: &ErrorReport) -> String {
    write_csv(&[report_columns(report), report_values(report).into_iter().map(fmt5).collect()])
}

pub fn convergence_csv(study: &ConvergenceStudy) -> String {
    let mut rows = vec![vec!["dt".into(), "steps".into(), "forward_error".into(), "adjoint_error".into()]];
    for r in &study.rows {
        rows.push(vec![fmt5(r.dt), r.steps.to_string(), fmt5(r.forward_error), fmt5(r.adjoint_error)]);
    }
    write_csv(&rows)
}

/// One row per stage: grid sizes, goal, reference and estimated errors,
/// accuracy, then the time error and the spatial errors per partition.
pub fn campaign_csv(logs: &[RefinementStageLog]) -> String {
    let Some(first) = logs.first() else {
        return String::new();
    };
    let mut header: Vec<String> = ["stage", "cells_x", "cells_y", "steps", "goal", "reference_error", "estimated_error", "accuracy", "time_error"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(first.report.partition_names.iter().map(|n| format!("space_error_{n}")));
    let mut rows = vec![header];
    for l in logs {
        let mut row = vec![
            l.stage.to_string(),
            l.report.cells.0.to_string(),
            l.report.cells.1.to_string(),
            l.time.num_steps().to_string(),
            fmt5(l.psi_ref()),
            fmt5(l.e_ref()),
            fmt5(l.e_est()),
            fmt5(l.accuracy()),
            fmt5(l.report.e_time),
        ];
        row.extend(l.report.e_space.iter().map(|&e| fmt5(e)));
        rows.push(row);
    }
    write_csv(&rows)
}

/// One compact JSON object per stage.
pub fn campaign_jsonl(logs: &[RefinementStageLog]) -> Result<String> {
    let mut s = String::new();
    for l in logs {
        s += &to_json(l)?;
        s.push('\n');
    }
    Ok(s)
}
