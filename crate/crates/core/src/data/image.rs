//! Binary PPM (P6) codec and bilinear image resizing. Images are
//! channel-major `3×H×W` tensors with values in [0, 1].

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bilinear resample to `target_h × target_w`. Sampling uses pixel-center
/// alignment, so an identity resize reproduces the input exactly and
/// values stay inside [0, 1].
pub fn resize_image(image: &Tensor, target_h: usize, target_w: usize) -> Result<Tensor> {
    let shape = image.shape();
    if shape.len() != 3 {
        return Err(Error::Dimension {
            context: "resize_image".into(),
            lhs: shape.to_vec(),
            rhs: vec![3, target_h, target_w],
        });
    }
    if target_h == 0 || target_w == 0 {
        return Err(Error::Contract("resize target dims must be positive".into()));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if h == target_h && w == target_w {
        return Ok(image.clone());
    }
    let src = image.data();
    let mut out = vec![0.0; c * target_h * target_w];
    let sy = h as f64 / target_h as f64;
    let sx = w as f64 / target_w as f64;
    for oi in 0..target_h {
        let fy = ((oi as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for oj in 0..target_w {
            let fx = ((oj as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            for ch in 0..c {
                let base = ch * h * w;
                let v00 = src[base + y0 * w + x0];
                let v01 = src[base + y0 * w + x1];
                let v10 = src[base + y1 * w + x0];
                let v11 = src[base + y1 * w + x1];
                let top = v00 + (v01 - v00) * wx;
                let bot = v10 + (v11 - v10) * wx;
                out[(ch * target_h + oi) * target_w + oj] = top + (bot - top) * wy;
            }
        }
    }
    Tensor::new(vec![c, target_h, target_w], out)
}

/// Loads a binary PPM (P6, maxval 255) into a `3×H×W` tensor scaled to
/// [0, 1].
pub fn load_image_ppm(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let pstr = path.display().to_string();

    // Header: magic, width, height, maxval as whitespace-separated tokens,
    // with '#' comments allowed. One whitespace byte follows maxval.
    let mut pos = 0usize;
    let mut next_token = |bytes: &[u8]| -> Result<String> {
        // Skip whitespace and comments.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Truncated {
                path: pstr.clone(),
                needed: start + 1,
                got: bytes.len(),
            });
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = next_token(&bytes)?;
    if magic != "P6" {
        return Err(Error::BadMagic {
            path: pstr,
            expected: "P6".into(),
            found: magic,
        });
    }
    let parse_dim = |tok: String| -> Result<usize> {
        tok.parse::<usize>().map_err(|_| Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: format!("bad header token '{tok}'"),
        })
    };
    let width = parse_dim(next_token(&bytes)?)?;
    let height = parse_dim(next_token(&bytes)?)?;
    let maxval = parse_dim(next_token(&bytes)?)?;
    if maxval != 255 {
        return Err(Error::Parse {
            path: pstr,
            line: 1,
            message: format!("only maxval 255 is supported, got {maxval}"),
        });
    }
    if width == 0 || height == 0 {
        return Err(Error::Parse {
            path: pstr,
            line: 1,
            message: "image dims must be positive".into(),
        });
    }
    pos += 1; // single whitespace after maxval
    let needed = pos + width * height * 3;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            path: pstr,
            needed,
            got: bytes.len(),
        });
    }
    let payload = &bytes[pos..needed];
    let plane = width * height;
    let mut data = vec![0.0; 3 * plane];
    for i in 0..plane {
        for ch in 0..3 {
            data[ch * plane + i] = payload[i * 3 + ch] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, height, width], data)
}

/// Writes a `3×H×W` tensor as binary PPM, rounding each value to the
/// nearest of 256 levels.
pub fn save_image_ppm(image: &Tensor, path: &Path) -> Result<()> {
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::Dimension {
            context: "save_image_ppm".into(),
            lhs: shape.to_vec(),
            rhs: vec![3],
        });
    }
    let (h, w) = (shape[1], shape[2]);
    let plane = h * w;
    let src = image.data();
    let mut buf = format!("P6\n{w} {h}\n255\n").into_bytes();
    for i in 0..plane {
        for ch in 0..3 {
            let v = (src[ch * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8;
            buf.push(v);
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
