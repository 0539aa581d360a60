use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::GridField;
use crate::{Error, Result, Vec3};

/// Positions and alphas loaded from a point-cloud file.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub position: Vec<Vec3>,
    pub alpha: Vec<f64>,
    pub dx: f64,
}

/// Writes `# sfc-particles v1 count=<n> dx=<dx>` followed by one
/// `x y z alpha` line per particle, 9 significant digits.
pub fn write_point_cloud(path: &Path, position: &[Vec3], alpha: &[f64], dx: f64) -> Result<()> {
    if position.len() != alpha.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} positions vs {} alphas",
            position.len(),
            alpha.len()
        )));
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "# sfc-particles v1 count={} dx={}", position.len(), dx)?;
        for (p, a) in position.iter().zip(alpha) {
            writeln!(w, "{:.8e} {:.8e} {:.8e} {:.8e}", p.x, p.y, p.z, a)?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn read_point_cloud(path: &Path) -> Result<PointCloud> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err("missing header".into()))?
        .map_err(|e| Error::io(path, e))?;
    let mut count = None;
    let mut dx = None;
    if !header.starts_with("# sfc-particles v1") {
        return Err(parse_err(format!("unexpected header {header:?}")));
    }
    for tok in header.split_whitespace() {
        if let Some(v) = tok.strip_prefix("count=") {
            count = v.parse::<usize>().ok();
        } else if let Some(v) = tok.strip_prefix("dx=") {
            dx = v.parse::<f64>().ok();
        }
    }
    let count = count.ok_or_else(|| parse_err("header lacks count".into()))?;
    let dx = dx.ok_or_else(|| parse_err("header lacks dx".into()))?;
    let mut position = Vec::with_capacity(count);
    let mut alpha = Vec::with_capacity(count);
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(format!("line {}: {e}", n + 2)))?;
        if v.len() != 4 {
            return Err(parse_err(format!("line {}: expected 4 values", n + 2)));
        }
        position.push(Vec3::new(v[0], v[1], v[2]));
        alpha.push(v[3]);
    }
    if position.len() != count {
        return Err(parse_err(format!(
            "header says {count} particles, found {}",
            position.len()
        )));
    }
    Ok(PointCloud {
        position,
        alpha,
        dx,
    })
}

pub fn write_field(path: &Path, field: &GridField) -> Result<()> {
    let s = serde_json::to_string(field).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_field(path: &Path) -> Result<GridField> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let f: GridField = serde_json::from_str(&s).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    f.validate()?;
    Ok(f)
}
