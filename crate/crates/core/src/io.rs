//! Plain-text point cloud files: `.xyz` positions, `.normals` directions
//! and `.idx` index lists, one record per line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};

/// Normals further than this from unit length are rejected on load.
pub const NORMAL_LENGTH_TOLERANCE: f64 = 1e-3;

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_triples(path: &Path, text: &str) -> Result<Vec<Vec3>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parsed: Option<Vec<f64>> = fields.iter().map(|f| f.parse().ok()).collect();
        match parsed {
            Some(v) if v.len() == 3 && v.iter().all(|x| x.is_finite()) => {
                out.push(Vec3::new(v[0], v[1], v[2]))
            }
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("expected three real numbers, found '{line}'"),
                })
            }
        }
    }
    Ok(out)
}

pub fn read_xyz(path: &Path) -> Result<Vec<Vec3>> {
    parse_triples(path, &read_text(path)?)
}

/// Reads unit-length directions, renormalizing those close to unit length.
pub fn read_normals(path: &Path) -> Result<Vec<Vec3>> {
    let raw = parse_triples(path, &read_text(path)?)?;
    raw.into_iter()
        .enumerate()
        .map(|(i, n)| {
            let len = n.norm();
            if (len - 1.0).abs() <= NORMAL_LENGTH_TOLERANCE {
                Ok(n / len)
            } else {
                Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("normal has length {len}, expected 1"),
                })
            }
        })
        .collect()
}

/// The `.normals` file next to a `.xyz` file.
pub fn normals_path(xyz: &Path) -> PathBuf {
    xyz.with_extension("normals")
}

/// Loads a cloud named after the file stem, with ground truth from the
/// sibling `.normals` file when it exists.
pub fn read_points(path: &Path) -> Result<PointCloud> {
    let points = read_xyz(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut cloud = PointCloud::new(name, points)?;
    let sibling = normals_path(path);
    if sibling.exists() {
        let normals = read_normals(&sibling)?;
        if normals.len() != cloud.len() {
            return Err(Error::invalid(format!(
                "{} has {} normals for {} points",
                sibling.display(),
                normals.len(),
                cloud.len()
            )));
        }
        cloud.set_normals(normals)?;
    }
    Ok(cloud)
}

/// One `x y z` line per vector in shortest round-trip decimal form.
pub fn triples_text(values: &[Vec3]) -> String {
    let mut out = String::with_capacity(values.len() * 32);
    for v in values {
        let _ = writeln!(out, "{} {} {}", v.x, v.y, v.z);
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes positions in shortest round-trip decimal form.
pub fn write_points(path: &Path, points: &[Vec3]) -> Result<()> {
    write_text(path, &triples_text(points))
}

pub fn write_normals(path: &Path, normals: &[Vec3]) -> Result<()> {
    write_text(path, &triples_text(normals))
}

/// Writes a cloud's `.xyz` file and, when it has ground truth, the sibling
/// `.normals` file.
pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_points(path, cloud.points())?;
    if let Some(n) = cloud.gt_normals() {
        write_normals(&normals_path(path), n)?;
    }
    Ok(())
}

/// One non-negative integer per line.
pub fn read_indices(path: &Path) -> Result<Vec<usize>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        out.push(line.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("expected a point index, found '{line}'"),
        })?);
    }
    Ok(out)
}

pub fn indices_text(indices: &[usize]) -> String {
    let mut out = String::new();
    for i in indices {
        let _ = writeln!(out, "{i}");
    }
    out
}

pub fn write_indices(path: &Path, indices: &[usize]) -> Result<()> {
    write_text(path, &indices_text(indices))
}

/// Shape names listed one per line, ignoring blanks and `#` comments.
pub fn read_shape_list(path: &Path) -> Result<Vec<String>> {
    Ok(read_text(path)?
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}
