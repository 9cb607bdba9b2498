//! Report files: `report.json`, `metrics.csv`, `records.jsonl` and
//! `curves/*.csv`, plus the `run_meta.json` sidecar.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use calibra_core::metrics::{CalibrationConfig, DistributionCurve};
use calibra_core::qa::EvalRecord;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::run::{score, RunReport, TranscriptLine};

pub const REPORT_FILE: &str = "report.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const META_FILE: &str = "run_meta.json";

pub const METRICS_HEADER: &str =
    "strategy,extraction,n,accuracy,avg_conf,gap,ece,ice_pos,ice_neg,macro_ce,concern_rate";

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::json(path))?;
    text.push('\n');
    std::fs::write(path, text).map_err(Error::io(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(Error::json(path))
}

fn write_lines<T: Serialize>(path: &Path, values: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).map_err(Error::io(path))?);
    for v in values {
        let line = serde_json::to_string(v).map_err(Error::json(path))?;
        writeln!(out, "{line}").map_err(Error::io(path))?;
    }
    out.flush().map_err(Error::io(path))
}

pub fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path).map_err(Error::io(path))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

pub fn write_transcripts(path: &Path, lines: &[TranscriptLine]) -> Result<()> {
    write_lines(path, lines)
}

pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>> {
    read_lines(path)
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// One CSV row per `(strategy, extraction)`; macro-averaged rows when the
/// run covers several datasets.
pub fn metrics_csv(report: &RunReport) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    match (&report.macro_average, report.datasets.as_slice()) {
        (Some(rows), _) => {
            for r in rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    r.strategy,
                    r.extraction,
                    r.n,
                    r.accuracy,
                    r.avg_confidence,
                    r.gap,
                    cell(r.ece),
                    cell(r.ice_pos),
                    cell(r.ice_neg),
                    r.macro_ce,
                    r.concern_rate
                );
            }
        }
        (None, [dataset]) => out.push_str(&dataset_rows(dataset)),
        (None, _) => {}
    }
    out
}

fn dataset_rows(dataset: &crate::run::DatasetReport) -> String {
    let mut out = String::new();
    for row in &dataset.summaries {
        let s = &row.summary;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            row.strategy,
            row.extraction,
            s.n,
            s.accuracy,
            s.avg_confidence,
            s.gap,
            cell(s.ece),
            cell(s.ice_pos),
            cell(s.ice_neg),
            s.macro_ce,
            dataset.concern_rate[&row.strategy]
        );
    }
    out
}

pub fn curve_csv(curve: &DistributionCurve) -> String {
    let mut out = String::from("x,density\n");
    for (x, y) in &curve.points {
        let _ = writeln!(out, "{x},{y}");
    }
    out
}

/// Writes every report file into `dir`.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<()> {
    let curves_dir = dir.join("curves");
    std::fs::create_dir_all(&curves_dir).map_err(Error::io(&curves_dir))?;
    write_json(&dir.join(REPORT_FILE), report)?;
    let metrics = dir.join(METRICS_FILE);
    std::fs::write(&metrics, metrics_csv(report)).map_err(Error::io(&metrics))?;
    if report.datasets.len() > 1 {
        for d in &report.datasets {
            let path = dir.join(format!("metrics_{}.csv", d.name));
            std::fs::write(&path, format!("{METRICS_HEADER}\n{}", dataset_rows(d))).map_err(Error::io(&path))?;
        }
    }
    write_lines(&dir.join(RECORDS_FILE), &report.records)?;
    for entry in report.datasets.iter().flat_map(|d| &d.curves) {
        if let Some(curve) = &entry.curve {
            let path = dir.join(&entry.file);
            std::fs::write(&path, curve_csv(curve)).map_err(Error::io(&path))?;
        }
    }
    Ok(())
}

pub fn load_report(dir: &Path) -> Result<RunReport> {
    read_json(&dir.join(REPORT_FILE))
}

/// Largest absolute difference between numbers at matching positions, or
/// `None` when the two documents differ in shape or in a non-number.
fn max_numeric_diff(a: &serde_json::Value, b: &serde_json::Value) -> Option<f64> {
    use serde_json::Value;
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => Some((x.as_f64()? - y.as_f64()?).abs()),
        (Value::Array(xs), Value::Array(ys)) if xs.len() == ys.len() => xs
            .iter()
            .zip(ys)
            .try_fold(0.0f64, |m, (x, y)| Some(m.max(max_numeric_diff(x, y)?))),
        (Value::Object(xs), Value::Object(ys)) if xs.len() == ys.len() => xs
            .iter()
            .try_fold(0.0f64, |m, (k, x)| Some(m.max(max_numeric_diff(x, ys.get(k)?)?))),
        _ => (a == b).then_some(0.0),
    }
}

/// Recomputes every metric of `report` from its stored records and returns
/// the largest deviation found.
pub fn audit(report: &RunReport) -> Result<f64> {
    let kde_points = report
        .config
        .get("kde_points")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Data("report config lacks kde_points".into()))? as usize;
    let recomputed = score(
        report.config.clone(),
        report.backend.clone(),
        &report
            .datasets
            .iter()
            .map(|d| (d.name.clone(), d.n_items))
            .collect::<Vec<_>>(),
        &report.strategies,
        &report.extractions,
        CalibrationConfig {
            num_buckets: report.num_buckets,
            clamp: report.clamp,
        },
        kde_points,
        report.records.clone(),
    )?;
    let stored = serde_json::to_value(report).expect("reports serialize");
    let fresh = serde_json::to_value(&recomputed).expect("reports serialize");
    max_numeric_diff(&stored, &fresh).ok_or_else(|| Error::Data("recomputed report differs in structure".into()))
}
