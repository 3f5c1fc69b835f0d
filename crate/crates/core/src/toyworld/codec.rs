//! Space-to-depth codec standing in for a pretrained autoencoder.
//!
//! Pixel `(c, 4Y + dy, 4X + dx)` of frame `i` maps to latent
//! `(c * 16 + dy * 4 + dx, Y, X)`. Values are copied, never transformed, so
//! decoding is an exact inverse.

use crate::error::{dim_err, Result};
use crate::numerics::{Scalar, Tensor};

pub const PATCH: usize = 4;
pub const LATENT_CHANNELS: usize = 3 * PATCH * PATCH;

fn dims(shape: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [l, c, h, w] => Ok((l, c, h, w)),
        _ => Err(dim_err!("{what} expects [L, C, H, W], got {shape:?}")),
    }
}

/// `[L, 3, H, W]` pixels to `[L, 48, H/4, W/4]` latents.
pub fn encode_latent<S: Scalar>(pixels: &Tensor<S>) -> Result<Tensor<S>> {
    let (l, c, h, w) = dims(pixels.shape(), "encode_latent")?;
    if c != 3 || h % PATCH != 0 || w % PATCH != 0 {
        return Err(dim_err!("encode_latent needs 3 channels and extents divisible by {PATCH}, got {:?}", pixels.shape()));
    }
    let (hl, wl) = (h / PATCH, w / PATCH);
    let src = pixels.data();
    let mut out = vec![S::zero(); src.len()];
    for i in 0..l {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let lc = ch * PATCH * PATCH + (y % PATCH) * PATCH + x % PATCH;
                    let dst = ((i * LATENT_CHANNELS + lc) * hl + y / PATCH) * wl + x / PATCH;
                    out[dst] = src[((i * c + ch) * h + y) * w + x];
                }
            }
        }
    }
    drop(src);
    Tensor::from_vec(out, &[l, LATENT_CHANNELS, hl, wl])
}

/// Inverse of [`encode_latent`].
pub fn decode_latent<S: Scalar>(latent: &Tensor<S>) -> Result<Tensor<S>> {
    let (l, c, hl, wl) = dims(latent.shape(), "decode_latent")?;
    if c != LATENT_CHANNELS {
        return Err(dim_err!("decode_latent needs {LATENT_CHANNELS} channels, got {c}"));
    }
    let (h, w) = (hl * PATCH, wl * PATCH);
    let src = latent.data();
    let mut out = vec![S::zero(); src.len()];
    for i in 0..l {
        for ch in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let lc = ch * PATCH * PATCH + (y % PATCH) * PATCH + x % PATCH;
                    out[((i * 3 + ch) * h + y) * w + x] = src[((i * LATENT_CHANNELS + lc) * hl + y / PATCH) * wl + x / PATCH];
                }
            }
        }
    }
    drop(src);
    Tensor::from_vec(out, &[l, 3, h, w])
}
