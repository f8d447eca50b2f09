//! Point-cloud file codecs.
//!
//! Two formats: ASCII (`x y z[ intensity]` per line, `#` comments) and
//! binary (magic `PCB1`, little-endian u64 count, then 32-bit float
//! triples). The binary format carries positions only.

use std::path::Path;

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;

const BINARY_MAGIC: &[u8; 4] = b"PCB1";

/// Loads either codec, sniffing the binary magic first.
pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(BINARY_MAGIC) {
        load_binary(path, &bytes)
    } else {
        load_ascii(path, &bytes)
    }
}

fn load_binary(path: &Path, bytes: &[u8]) -> Result<PointCloud> {
    let pstr = path.display().to_string();
    if bytes.len() < 12 {
        return Err(Error::Truncated {
            path: pstr,
            needed: 12,
            got: bytes.len(),
        });
    }
    let count = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let needed = 12 + count * 12;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            path: pstr,
            needed,
            got: bytes.len(),
        });
    }
    let mut points = Vec::with_capacity(count);
    for i in 0..count {
        let base = 12 + i * 12;
        let x = f32::from_le_bytes(bytes[base..base + 4].try_into().unwrap());
        let y = f32::from_le_bytes(bytes[base + 4..base + 8].try_into().unwrap());
        let z = f32::from_le_bytes(bytes[base + 8..base + 12].try_into().unwrap());
        points.push([x as f64, y as f64, z as f64]);
    }
    Ok(PointCloud::new(points))
}

fn load_ascii(path: &Path, bytes: &[u8]) -> Result<PointCloud> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        message: "file is neither PCB1 binary nor UTF-8 text".into(),
    })?;
    let mut points = Vec::new();
    let mut intensity: Option<Vec<f64>> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse = |tok: &str| -> Result<f64> {
            tok.parse::<f64>().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: lineno,
                message: format!("non-numeric token '{tok}'"),
            })
        };
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 && toks.len() != 4 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno,
                message: format!("expected 3 or 4 values, got {}", toks.len()),
            });
        }
        let has_intensity = toks.len() == 4;
        // The first data line fixes the arity for the whole file.
        if points.is_empty() {
            intensity = has_intensity.then(Vec::new);
        } else if intensity.is_some() != has_intensity {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno,
                message: "mixed lines with and without intensity".into(),
            });
        }
        points.push([parse(toks[0])?, parse(toks[1])?, parse(toks[2])?]);
        if let Some(xs) = intensity.as_mut() {
            xs.push(parse(toks[3])?);
        }
    }
    Ok(PointCloud { points, intensity })
}

/// Writes the ASCII codec; intensity is emitted as a fourth column when
/// present.
pub fn save_cloud_ascii(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (i, p) in cloud.points.iter().enumerate() {
        match &cloud.intensity {
            Some(xs) => out.push_str(&format!("{} {} {} {}\n", p[0], p[1], p[2], xs[i])),
            None => out.push_str(&format!("{} {} {}\n", p[0], p[1], p[2])),
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes the binary codec (positions only, 32-bit floats). Any intensity
/// channel is discarded; use the ASCII codec to keep it.
pub fn save_cloud_binary(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + cloud.len() * 12);
    buf.extend_from_slice(BINARY_MAGIC);
    buf.extend_from_slice(&(cloud.len() as u64).to_le_bytes());
    for p in &cloud.points {
        buf.extend_from_slice(&(p[0] as f32).to_le_bytes());
        buf.extend_from_slice(&(p[1] as f32).to_le_bytes());
        buf.extend_from_slice(&(p[2] as f32).to_le_bytes());
    }
    std::fs::write(path, &buf).map_err(|e| Error::io(path, e))
}
