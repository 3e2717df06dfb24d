//! Binary PPM ingestion and bilinear resizing.

use std::path::Path;

use super::codec::{read_file, write_file};
use crate::error::{Error, Result};
use crate::tensor::{FloatTensor, Shape};

fn unsupported(path: &Path, reason: impl Into<String>) -> Error {
    Error::UnsupportedImage {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Parses a `P6` image with maxval 255 into a `[3, H, W]` tensor of
/// `byte / 255` values.
pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<FloatTensor> {
    if bytes.len() < 2 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
        });
    }
    match &bytes[..2] {
        b"P6" => {}
        b"P3" => {
            return Err(unsupported(
                path,
                "ASCII PPM (P3); only binary P6 is supported",
            ))
        }
        m => {
            return Err(unsupported(
                path,
                format!("magic {:?} is not P6", String::from_utf8_lossy(m)),
            ))
        }
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => {
                    return Err(Error::Truncated {
                        path: path.to_path_buf(),
                    })
                }
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(unsupported(path, "malformed header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| unsupported(path, "header value out of range"))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(unsupported(
            path,
            format!("maxval {maxval}; only 255 is supported"),
        ));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        Some(_) => return Err(unsupported(path, "malformed header")),
        None => {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
            })
        }
    }
    let shape = Shape::new(vec![3, h, w]).map_err(|e| unsupported(path, e.to_string()))?;
    let pixels = &bytes[pos..];
    if pixels.len() < 3 * h * w {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
        });
    }
    let plane = h * w;
    let mut data = vec![0.0f32; 3 * plane];
    for (p, rgb) in pixels.chunks_exact(3).take(plane).enumerate() {
        for c in 0..3 {
            data[c * plane + p] = rgb[c] as f32 / 255.0;
        }
    }
    FloatTensor::new(shape, data)
}

/// Inverse of [`decode_ppm`]: values are clamped to `[0, 1]` and rounded
/// to the nearest byte.
pub fn encode_ppm(img: &FloatTensor) -> Result<Vec<u8>> {
    let (h, w) = match *img.shape().dims() {
        [3, h, w] => (h, w),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "PPM needs a [3,H,W] tensor, got {}",
                img.shape()
            )))
        }
    };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let data = img.data();
    for p in 0..plane {
        for c in 0..3 {
            out.push((data[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn load_ppm(path: &Path) -> Result<FloatTensor> {
    decode_ppm(&read_file(path)?, path)
}

pub fn save_ppm(img: &FloatTensor, path: &Path) -> Result<()> {
    write_file(path, &encode_ppm(img)?)
}

/// Source coordinates for corner-aligned sampling: the first and last
/// output samples land on the first and last input samples; a single
/// output sample lands on the centre.
fn sample_points(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    (0..output)
        .map(|i| {
            let x = if output == 1 {
                (input - 1) as f64 / 2.0
            } else {
                i as f64 * (input - 1) as f64 / (output - 1) as f64
            };
            let lo = (x.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, x - lo as f64)
        })
        .collect()
}

/// Bilinear resize of a `[C, H, W]` image to `target` (`[C, h, w]`).
pub fn preprocess(img: &FloatTensor, target: &Shape) -> Result<FloatTensor> {
    let (c, h, w) = match *img.shape().dims() {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "image must be [C,H,W], got {}",
                img.shape()
            )))
        }
    };
    let (th, tw) = match *target.dims() {
        [tc, th, tw] if tc == c => (th, tw),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "cannot resize {} to {target}",
                img.shape()
            )))
        }
    };
    if (th, tw) == (h, w) {
        return Ok(img.clone());
    }
    let rows = sample_points(h, th);
    let cols = sample_points(w, tw);
    let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
    let src = img.data();
    let mut out = Vec::with_capacity(c * th * tw);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        let at = |y: usize, x: usize| plane[y * w + x] as f64;
        for &(y0, y1, ty) in &rows {
            for &(x0, x1, tx) in &cols {
                let top = lerp(at(y0, x0), at(y0, x1), tx);
                let bottom = lerp(at(y1, x0), at(y1, x1), tx);
                out.push(lerp(top, bottom, ty) as f32);
            }
        }
    }
    FloatTensor::new(target.clone(), out)
}
