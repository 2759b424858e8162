use std::path::Path;

use super::{evaluate_all, MetricReport};
use crate::data::{list_pngs, read_gray, read_mask};
use crate::error::{Error, Result};

/// CSV column names in table order.
pub const METRIC_COLUMNS: [&str; 7] = [
    "dice",
    "iou",
    "specificity",
    "fbw",
    "s_alpha",
    "e_phi_max",
    "mae",
];

/// Evaluates every `*.png` probability map in `pred_dir` (gray value / 255)
/// against the mask of the same file name in `gt_dir`. Rows are sorted by id.
pub fn evaluate_dirs(
    pred_dir: &Path,
    gt_dir: &Path,
    threshold: f64,
) -> Result<Vec<(String, MetricReport)>> {
    let preds = list_pngs(pred_dir)?;
    if preds.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no .png files in {}",
            pred_dir.display()
        )));
    }
    let mut rows = Vec::with_capacity(preds.len());
    for (id, path) in preds {
        let gt_path = gt_dir.join(path.file_name().unwrap_or_default());
        if !gt_path.exists() {
            return Err(Error::InvalidInput(format!(
                "missing ground truth {}",
                gt_path.display()
            )));
        }
        let prob = read_gray(&path)?;
        let gt = read_mask(&gt_path)?;
        let report = evaluate_all(&prob, &gt, threshold).map_err(|e| match e {
            Error::ShapeMismatch { .. } => {
                Error::InvalidInput(format!("{id}: prediction and mask sizes differ"))
            }
            other => other,
        })?;
        rows.push((id, report));
    }
    Ok(rows)
}

/// Column-wise mean of the reports.
pub fn mean_report(rows: &[(String, MetricReport)]) -> Result<MetricReport> {
    if rows.is_empty() {
        return Err(Error::InvalidInput("no reports to average".into()));
    }
    let mut acc = [0.0; 7];
    for (_, r) in rows {
        for (a, v) in acc.iter_mut().zip(r.values()) {
            *a += v;
        }
    }
    Ok(MetricReport::from_values(
        acc.map(|a| a / rows.len() as f64),
    ))
}

pub fn write_per_sample_csv(path: &Path, rows: &[(String, MetricReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id"];
    header.extend(METRIC_COLUMNS);
    w.write_record(&header)?;
    for (id, r) in rows {
        let mut rec = vec![id.clone()];
        rec.extend(r.values().iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_mean_csv(path: &Path, mean: &MetricReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRIC_COLUMNS)?;
    w.write_record(mean.values().iter().map(|v| v.to_string()))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a CSV whose last seven columns are exactly [`METRIC_COLUMNS`];
/// returns one report per row (for `mean.csv`, a single row).
pub fn read_report_csv(path: &Path) -> Result<Vec<MetricReport>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let tail = header.len().checked_sub(7).map(|k| &header[k..]);
    if tail.map(|t| t.iter().map(String::as_str).eq(METRIC_COLUMNS)) != Some(true) {
        return Err(Error::InvalidInput(format!(
            "{}: expected columns ending with {}, found {}",
            path.display(),
            METRIC_COLUMNS.join(","),
            header.join(",")
        )));
    }
    let offset = header.len() - 7;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut v = [0.0; 7];
        for (i, slot) in v.iter_mut().enumerate() {
            let field = rec.get(offset + i).unwrap_or("");
            *slot = field.parse().map_err(|_| {
                Error::InvalidInput(format!("{}: `{field}` is not a number", path.display()))
            })?;
        }
        out.push(MetricReport::from_values(v));
    }
    if out.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no rows", path.display())));
    }
    Ok(out)
}
