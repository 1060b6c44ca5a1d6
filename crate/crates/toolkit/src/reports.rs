//! CSV artifacts. Every file starts with a header row and floats are
//! written in Rust's shortest round-trip form, so reading a file back gives
//! the exact values written.

use std::path::Path;

use nmd_core::detector::{FirstKResult, LayerImportance};
use nmd_core::metrics::EvalReport;
use nmd_core::model::TrainReport;
use nmd_core::nmd::NmdVector;

use crate::error::{write_atomic, Error, Result};

fn to_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Usage(format!("csv buffer: {e}")))
}

fn write(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    write_atomic(path, &to_csv(header, rows)?)
}

/// Reads a CSV with the given header into string rows.
pub fn read_csv(path: &Path, header: &[&str]) -> Result<Vec<Vec<String>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let found: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if found != header {
        return Err(Error::format(path, format!("expected header {header:?}, found {found:?}")));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        out.push(rec?.iter().map(str::to_string).collect());
    }
    Ok(out)
}

fn num(path: &Path, s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::format(path, format!("not a number: {s:?}")))
}

pub const NMD_HEADER: [&str; 4] = ["global_channel", "layer", "channel", "value"];

pub fn write_nmd_vector(path: &Path, v: &NmdVector) -> Result<()> {
    let rows = v.values.iter().enumerate().map(|(g, val)| {
        let (l, c) = v.channels.locate(g).expect("vector entries are indexed");
        vec![g.to_string(), (l + 1).to_string(), c.to_string(), val.to_string()]
    });
    write(path, &NMD_HEADER, rows)
}

/// `(layer, channel, value)` rows; layers are numbered from 1.
pub fn read_nmd_vector(path: &Path) -> Result<Vec<(usize, usize, f64)>> {
    read_csv(path, &NMD_HEADER)?
        .iter()
        .map(|r| {
            let int = |s: &str| s.parse::<usize>().map_err(|_| Error::format(path, format!("not an index: {s:?}")));
            Ok((int(&r[1])?, int(&r[2])?, num(path, &r[3])?))
        })
        .collect()
}

pub fn report_rows(r: &EvalReport) -> Vec<(String, f64)> {
    vec![
        ("auroc".into(), r.auroc),
        ("tnr95".into(), r.tnr95),
        ("acc".into(), r.acc),
        ("positives".into(), r.positives as f64),
        ("negatives".into(), r.negatives as f64),
    ]
}

pub fn write_metrics(path: &Path, rows: &[(String, f64)]) -> Result<()> {
    write(path, &["metric", "value"], rows.iter().map(|(k, v)| vec![k.clone(), v.to_string()]))
}

pub fn read_metrics(path: &Path) -> Result<Vec<(String, f64)>> {
    read_csv(path, &["metric", "value"])?.iter().map(|r| Ok((r[0].clone(), num(path, &r[1])?))).collect()
}

pub fn write_roc(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    write(path, &["fpr", "tpr"], points.iter().map(|(f, t)| vec![f.to_string(), t.to_string()]))
}

pub fn read_roc(path: &Path) -> Result<Vec<(f64, f64)>> {
    read_csv(path, &["fpr", "tpr"])?.iter().map(|r| Ok((num(path, &r[0])?, num(path, &r[1])?))).collect()
}

pub fn write_importance(path: &Path, imp: &LayerImportance) -> Result<()> {
    let rows = imp.raw.iter().zip(&imp.normalized).enumerate().map(|(l, (r, n))| vec![(l + 1).to_string(), r.to_string(), n.to_string()]);
    write(path, &["layer", "raw_importance", "normalized_importance"], rows)
}

pub fn write_first_k(path: &Path, res: &[FirstKResult]) -> Result<()> {
    write(path, &["k", "dims", "auroc"], res.iter().map(|r| vec![r.k.to_string(), r.dims.to_string(), r.auroc.to_string()]))
}

pub fn write_losses(path: &Path, report: &TrainReport) -> Result<()> {
    let steps = report.step_losses.len();
    let per_epoch = if report.epoch_losses.is_empty() { steps.max(1) } else { steps.div_ceil(report.epoch_losses.len()).max(1) };
    let rows = report.step_losses.iter().enumerate().map(|(s, l)| vec![s.to_string(), (s / per_epoch).to_string(), l.to_string()]);
    write(path, &["step", "epoch", "loss"], rows)
}

/// One row per detection unit: index, first example, example count, score.
pub fn write_scores(path: &Path, batch: usize, scores: &[f64]) -> Result<()> {
    let rows = scores.iter().enumerate().map(|(u, s)| vec![u.to_string(), (u * batch).to_string(), batch.to_string(), s.to_string()]);
    write(path, &["unit", "first_example", "examples", "score"], rows)
}

/// Labeled evaluation scores.
pub fn write_labeled_scores(path: &Path, scores: &[f64], labels: &[u8]) -> Result<()> {
    write(path, &["unit", "label", "score"], scores.iter().zip(labels).enumerate().map(|(i, (s, l))| vec![i.to_string(), l.to_string(), s.to_string()]))
}
