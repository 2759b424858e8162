use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use stylseg::metrics::{mean_report, read_report_csv, MetricReport, METRIC_COLUMNS};

/// Radar axis names; the last axis is `1 - mae`.
pub const RADAR_AXES: [&str; 7] = [
    "dice",
    "iou",
    "specificity",
    "fbw",
    "s_alpha",
    "e_phi_max",
    "1-mae",
];

const TABLE_HEADINGS: [&str; 7] = [
    "Dice",
    "IoU",
    "Specificity",
    "F_beta^w",
    "S_alpha",
    "E_phi^max",
    "MAE",
];

/// One `report` input: `name=path` or a bare path named after its parent dir.
pub fn parse_input(spec: &str) -> (String, PathBuf) {
    if let Some((name, path)) = spec.split_once('=') {
        return (name.to_string(), PathBuf::from(path));
    }
    let path = PathBuf::from(spec);
    let name = path
        .parent()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .filter(|n| !n.is_empty())
        .unwrap_or_else(|| spec.to_string());
    (name, path)
}

/// Reads each CSV (mean or per-sample); multi-row files are averaged.
pub fn collect(inputs: &[String]) -> Result<Vec<(String, MetricReport)>> {
    if inputs.is_empty() {
        bail!("report needs at least one evaluation CSV");
    }
    inputs
        .iter()
        .map(|spec| {
            let (name, path) = parse_input(spec);
            let reports =
                read_report_csv(&path).with_context(|| format!("reading {}", path.display()))?;
            let rows: Vec<(String, MetricReport)> =
                reports.into_iter().map(|r| (String::new(), r)).collect();
            Ok((name, mean_report(&rows)?))
        })
        .collect()
}

pub fn table_text(rows: &[(String, MetricReport)]) -> String {
    let name_w = rows
        .iter()
        .map(|(n, _)| n.len())
        .max()
        .unwrap_or(0)
        .max("Model".len());
    let col_w = TABLE_HEADINGS
        .iter()
        .map(|h| h.len())
        .max()
        .unwrap_or(0)
        .max(6);
    let mut s = format!("{:<name_w$}", "Model");
    for h in TABLE_HEADINGS {
        let _ = write!(s, "  {h:>col_w$}");
    }
    s.push('\n');
    for (name, r) in rows {
        let _ = write!(s, "{name:<name_w$}");
        for v in r.values() {
            let _ = write!(s, "  {v:>col_w$.4}");
        }
        s.push('\n');
    }
    s
}

/// Writes `table.csv`, `table.txt` and `radar.csv` into `out`.
pub fn write_report(rows: &[(String, MetricReport)], out: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(out.join("table.csv"))?;
    let mut header = vec!["model"];
    header.extend(METRIC_COLUMNS);
    w.write_record(&header)?;
    for (name, r) in rows {
        let mut rec = vec![name.clone()];
        rec.extend(r.values().iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    std::fs::write(out.join("table.txt"), table_text(rows))?;
    let mut w = csv::Writer::from_path(out.join("radar.csv"))?;
    w.write_record(["model", "axis", "value"])?;
    for (name, r) in rows {
        for (axis, v) in RADAR_AXES.iter().zip(r.radar()) {
            w.write_record([name.as_str(), axis, &v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
