use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::eval::MetricReport;
use crate::{Error, Result};

/// Row grouping of an aggregated table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum TableKind {
    /// One row per (cavity size, method).
    Size,
    /// One row per (cavity location, method), with the anti-chamfer column.
    Location,
}

#[derive(Debug, Serialize)]
struct SizeRow {
    cavity_size_rate: f64,
    method: String,
    cd_x1e3: f64,
    n_scenes: usize,
}

#[derive(Debug, Serialize)]
struct LocationRow {
    cavity_location: String,
    method: String,
    cd_x1e3: f64,
    acd_x1e3: f64,
    n_scenes: usize,
}

/// Every `metrics.csv` below `root`, in sorted order.
pub fn find_metric_files(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == "metrics.csv") {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Averages the metric rows found under `root` over scenes and writes the
/// table. Returns the number of rows written.
pub fn write_table(root: &Path, out: &Path, kind: TableKind) -> Result<usize> {
    let mut rows = Vec::new();
    for f in find_metric_files(root)? {
        rows.extend(MetricReport::read_csv(&f)?);
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument(format!("no metrics.csv under {}", root.display())));
    }
    let io = |e: csv::Error| Error::InvalidArgument(format!("{}: {e}", out.display()));
    let mut w = csv::Writer::from_path(out).map_err(io)?;
    let n;
    match kind {
        TableKind::Size => {
            // f64 keys sort by their bit pattern, which orders non-negative values
            let mut groups: BTreeMap<(u64, String), Vec<f64>> = BTreeMap::new();
            for r in &rows {
                groups.entry((r.cavity_size_rate.to_bits(), r.method.clone())).or_default().push(r.cd_static);
            }
            n = groups.len();
            for ((size, method), cds) in groups {
                w.serialize(SizeRow {
                    cavity_size_rate: f64::from_bits(size),
                    method,
                    cd_x1e3: 1e3 * mean(&cds),
                    n_scenes: cds.len(),
                })
                .map_err(io)?;
            }
        }
        TableKind::Location => {
            let mut groups: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
            for r in &rows {
                groups
                    .entry((r.cavity_location.clone(), r.method.clone()))
                    .or_default()
                    .push((r.cd_static, r.acd_static));
            }
            n = groups.len();
            for ((loc, method), v) in groups {
                let cd: Vec<f64> = v.iter().map(|x| x.0).collect();
                let acd: Vec<f64> = v.iter().map(|x| x.1).collect();
                w.serialize(LocationRow {
                    cavity_location: loc,
                    method,
                    cd_x1e3: 1e3 * mean(&cd),
                    acd_x1e3: 1e3 * mean(&acd),
                    n_scenes: v.len(),
                })
                .map_err(io)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(n)
}
