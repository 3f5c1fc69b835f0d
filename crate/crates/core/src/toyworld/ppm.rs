//! Binary PPM (P6, maxval 255) frames.

use std::fs;
use std::path::Path;

use crate::error::{dim_err, Error, Result};
use crate::numerics::Tensor;

/// Quantizes `[0, 1]` to a byte (clamping, round half up).
pub fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Encodes a `[3, H, W]` frame.
pub fn encode_ppm(frame: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, w) = match *frame.shape() {
        [3, h, w] => (h, w),
        _ => return Err(dim_err!("PPM frame must be [3, H, W], got {:?}", frame.shape())),
    };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = frame.data();
    let plane = h * w;
    for j in 0..plane {
        for c in 0..3 {
            out.push(to_byte(d[c * plane + j]));
        }
    }
    Ok(out)
}

/// Decodes a P6 image into a `[3, H, W]` frame with values `byte / 255`.
pub fn decode_ppm(bytes: &[u8], origin: &Path) -> Result<Tensor<f32>> {
    let corrupt = |reason: &str| Error::Corrupt {
        path: origin.to_path_buf(),
        reason: reason.to_string(),
    };
    // Header: magic, width, height, maxval separated by whitespace (no comments).
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(corrupt("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| corrupt("non-ASCII header"))?);
    }
    pos += 1;
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(corrupt("not a P6 image with maxval 255"));
    }
    let w: usize = fields[1].parse().map_err(|_| corrupt("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| corrupt("bad height"))?;
    let body = bytes.get(pos..).unwrap_or_default();
    if body.len() != 3 * w * h {
        return Err(corrupt("pixel payload has the wrong length"));
    }
    let plane = h * w;
    let mut data = vec![0f32; 3 * plane];
    for j in 0..plane {
        for c in 0..3 {
            data[c * plane + j] = body[3 * j + c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(data, &[3, h, w])
}

pub fn write_ppm(path: &Path, frame: &Tensor<f32>) -> Result<()> {
    let bytes = encode_ppm(frame)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes, path)
}

/// Writes every frame of `[L, 3, H, W]` as `{prefix}{i:03}.ppm` under `dir`;
/// returns the file names.
pub fn write_frames(dir: &Path, prefix: &str, video: &Tensor<f32>) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let l = video.dim(0);
    let mut names = Vec::with_capacity(l);
    for i in 0..l {
        let name = format!("{prefix}{i:03}.ppm");
        write_ppm(&dir.join(&name), &video.narrow(0, i, 1)?.reshape(&video.shape()[1..])?)?;
        names.push(name);
    }
    Ok(names)
}
