//! On-disk formats: ASCII PLY point clouds, raw little-endian volumes with a
//! JSON sidecar, and PGM images.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Frame, GridSpec, LabelVolume, PointCloud, VoxelGrid};

/// `<path>.json`, the sidecar of a raw data file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

/// Writes pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

// ---- PLY ----

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out = String::with_capacity(cloud.len() * 48 + 128);
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", cloud.len());
    out.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
    for p in cloud.points() {
        // `{}` on f64 prints the shortest string that parses back exactly.
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    ensure_parent(path)?;
    fs::write(path, out)?;
    Ok(())
}

pub fn read_ply(path: &Path, frame: Frame) -> Result<PointCloud> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("ply") {
        return Err(Error::format(path, "missing ply magic"));
    }
    let mut count = None;
    let mut props = Vec::new();
    loop {
        let line = lines.next().ok_or_else(|| Error::format(path, "unterminated header"))?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => {}
            ["format", ..] => return Err(Error::format(path, "only ascii PLY is supported")),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| Error::format(path, "bad vertex count"))?)
            }
            ["property", _, name] => props.push(name.to_string()),
            ["comment", ..] | [] => {}
            _ => return Err(Error::format(path, format!("unsupported header line '{line}'"))),
        }
    }
    let n = count.ok_or_else(|| Error::format(path, "no vertex element"))?;
    let idx = |name: &str| {
        props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| Error::format(path, format!("missing property {name}")))
    };
    let (ix, iy, iz) = (idx("x")?, idx("y")?, idx("z")?);
    let mut pts = Vec::with_capacity(n);
    for _ in 0..n {
        let line = lines.next().ok_or_else(|| Error::format(path, "truncated vertex list"))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|w| w.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(path, format!("bad vertex line '{line}'")))?;
        if vals.len() != props.len() {
            return Err(Error::format(path, format!("vertex line has {} values", vals.len())));
        }
        pts.push([vals[ix], vals[iy], vals[iz]]);
    }
    PointCloud::from_arrays(&pts, frame)
}

// ---- raw volumes ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing: f64,
    pub origin: [f64; 3],
    /// `"f32"` for attenuation, `"u8"` for labels.
    pub dtype: String,
}

fn header_for(spec: &GridSpec, dtype: &str) -> VolumeHeader {
    VolumeHeader { dims: spec.dims, spacing: spec.spacing, origin: spec.origin, dtype: dtype.into() }
}

fn read_header(path: &Path, dtype: &str) -> Result<GridSpec> {
    let h: VolumeHeader = read_json(&sidecar_path(path))?;
    if h.dtype != dtype {
        return Err(Error::format(path, format!("expected dtype {dtype}, header says {}", h.dtype)));
    }
    GridSpec::new(h.dims, h.spacing, h.origin).map_err(|e| e.context(path.display().to_string()))
}

/// Writes `path` (raw f32 LE) and `path.json`.
pub fn write_volume(path: &Path, grid: &VoxelGrid) -> Result<()> {
    let mut bytes = Vec::with_capacity(grid.values().len() * 4);
    for v in grid.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    ensure_parent(path)?;
    fs::write(path, bytes)?;
    write_json(&sidecar_path(path), &header_for(grid.spec(), "f32"))
}

pub fn read_volume(path: &Path) -> Result<VoxelGrid> {
    let spec = read_header(path, "f32")?;
    let bytes = fs::read(path)?;
    if bytes.len() != spec.len() * 4 {
        return Err(Error::format(path, format!("expected {} bytes, found {}", spec.len() * 4, bytes.len())));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    VoxelGrid::from_values(spec, values)
}

/// Writes `path` (raw u8) and `path.json`.
pub fn write_labels(path: &Path, labels: &LabelVolume) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, labels.labels())?;
    write_json(&sidecar_path(path), &header_for(labels.spec(), "u8"))
}

pub fn read_labels(path: &Path) -> Result<LabelVolume> {
    let spec = read_header(path, "u8")?;
    let bytes = fs::read(path)?;
    if bytes.len() != spec.len() {
        return Err(Error::format(path, format!("expected {} bytes, found {}", spec.len(), bytes.len())));
    }
    LabelVolume::from_labels(spec, bytes)
}

// ---- PGM ----

/// Min-max normalization recorded next to a 16-bit PGM.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgmScale {
    pub width: usize,
    pub height: usize,
    pub min: f64,
    pub max: f64,
}

fn pgm_bytes(width: usize, height: usize, maxval: u32, body: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    out.extend_from_slice(body);
    out
}

/// Writes row-major `pixels` as a 16-bit PGM after min-max normalization,
/// plus a JSON sidecar with the range. A constant image maps to zeros.
pub fn write_pgm16(path: &Path, width: usize, height: usize, pixels: &[f64]) -> Result<PgmScale> {
    if pixels.len() != width * height {
        return Err(Error::SizeMismatch { left: pixels.len(), right: width * height });
    }
    let min = pixels.iter().copied().fold(f64::INFINITY, f64::min);
    let max = pixels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    let mut body = Vec::with_capacity(pixels.len() * 2);
    for &p in pixels {
        let q = if range > 0.0 { ((p - min) / range * 65535.0).round() as u16 } else { 0 };
        body.extend_from_slice(&q.to_be_bytes());
    }
    ensure_parent(path)?;
    fs::write(path, pgm_bytes(width, height, 65535, &body))?;
    let scale = PgmScale { width, height, min, max };
    write_json(&sidecar_path(path), &scale)?;
    Ok(scale)
}

/// Reads a 16-bit PGM and maps samples back through its sidecar range.
pub fn read_pgm16(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let scale: PgmScale = read_json(&sidecar_path(path))?;
    let (w, h, maxval, body) = parse_pgm(path)?;
    if maxval != 65535 || (w, h) != (scale.width, scale.height) {
        return Err(Error::format(path, "header disagrees with sidecar"));
    }
    let range = scale.max - scale.min;
    let px = body
        .chunks_exact(2)
        .map(|c| scale.min + u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0 * range)
        .collect();
    Ok((w, h, px))
}

pub fn write_pgm8(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::SizeMismatch { left: pixels.len(), right: width * height });
    }
    ensure_parent(path)?;
    fs::write(path, pgm_bytes(width, height, 255, pixels))?;
    Ok(())
}

pub fn read_pgm8(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let (w, h, maxval, body) = parse_pgm(path)?;
    if maxval != 255 {
        return Err(Error::format(path, format!("expected 8-bit PGM, maxval {maxval}")));
    }
    Ok((w, h, body))
}

fn parse_pgm(path: &Path) -> Result<(usize, usize, u32, Vec<u8>)> {
    let bytes = fs::read(path)?;
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(Error::format(path, "not a binary PGM (P5)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::format(path, format!("bad header field '{s}'")));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])? as u32);
    let sample = if maxval > 255 { 2 } else { 1 };
    let body = bytes.get(pos..).unwrap_or_default().to_vec();
    if body.len() != w * h * sample {
        return Err(Error::format(path, format!("expected {} data bytes, found {}", w * h * sample, body.len())));
    }
    Ok((w, h, maxval, body))
}
