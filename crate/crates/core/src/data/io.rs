//! ASCII XYZ and PLY point files.
//!
//! Coordinates are written with Rust's shortest round-trip float formatting,
//! so a write followed by a read reproduces every value exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::geometry::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Xyz,
    Ply,
}

impl CloudFormat {
    /// Picks the format from the file extension (`.ply`, otherwise XYZ).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("ply") => CloudFormat::Ply,
            _ => CloudFormat::Xyz,
        }
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_triple(path: &Path, line_no: usize, line: &str) -> Result<[f64; 3]> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(parse_err(path, line_no, format!("expected 3 coordinates, found {}", fields.len())));
    }
    let mut p = [0.0f64; 3];
    for (v, f) in p.iter_mut().zip(&fields) {
        *v = f
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("invalid number {f:?}")))?;
        if !v.is_finite() {
            return Err(parse_err(path, line_no, format!("non-finite coordinate {f:?}")));
        }
    }
    Ok(p)
}

pub fn read_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(Error::file(path))?;
    let points = match format {
        CloudFormat::Xyz => read_xyz(path, &text)?,
        CloudFormat::Ply => read_ply(path, &text)?,
    };
    if points.is_empty() {
        return Err(invalid!("{} contains no points", path.display()));
    }
    PointCloud::new(points)
}

fn read_xyz(path: &Path, text: &str) -> Result<Vec<[f64; 3]>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(parse_triple(path, i + 1, t)?);
    }
    Ok(out)
}

fn read_ply(path: &Path, text: &str) -> Result<Vec<[f64; 3]>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(path, 1, "missing 'ply' magic line")),
    }
    let mut count: Option<usize> = None;
    let mut props = Vec::new();
    let mut in_vertex = false;
    loop {
        let Some((i, line)) = lines.next() else {
            return Err(parse_err(path, text.lines().count(), "header ended without end_header"));
        };
        let n = i + 1;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(parse_err(path, n, format!("unsupported PLY format {other:?}; only ascii is read")))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", c] => {
                count = Some(c.parse().map_err(|_| parse_err(path, n, "invalid vertex count"))?);
                in_vertex = true;
            }
            ["element", name, ..] => {
                return Err(parse_err(path, n, format!("unsupported PLY element {name:?}; only vertex is read")))
            }
            ["property", ty, name] if in_vertex => {
                if !matches!(*ty, "float" | "double" | "float32" | "float64") {
                    return Err(parse_err(path, n, format!("unsupported property type {ty:?}")));
                }
                props.push(name.to_string());
            }
            ["property", ..] => return Err(parse_err(path, n, format!("unsupported property line {line:?}"))),
            ["end_header"] => break,
            _ => return Err(parse_err(path, n, format!("unrecognized header line {line:?}"))),
        }
    }
    if props != ["x", "y", "z"] {
        return Err(invalid!(
            "{}: vertex properties must be exactly x y z, got {props:?}",
            path.display()
        ));
    }
    let count = count.ok_or_else(|| invalid!("{}: no vertex element", path.display()))?;
    let mut out = Vec::with_capacity(count);
    for (i, line) in lines {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if out.len() == count {
            return Err(parse_err(path, i + 1, "more vertex lines than declared"));
        }
        out.push(parse_triple(path, i + 1, t)?);
    }
    if out.len() != count {
        return Err(invalid!("{}: declared {count} vertices, found {}", path.display(), out.len()));
    }
    Ok(out)
}

/// Serializes a cloud in the given format.
pub fn format_cloud(cloud: &PointCloud, format: CloudFormat) -> String {
    let mut s = String::new();
    if format == CloudFormat::Ply {
        let _ = write!(
            s,
            "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
            cloud.len()
        );
    }
    for p in cloud.points() {
        let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
    }
    s
}

pub fn write_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    fs::write(path, format_cloud(cloud, format)).map_err(Error::file(path))?;
    Ok(())
}
