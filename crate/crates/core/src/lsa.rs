//! Latent-shift attention: each frame attends over its own tokens plus a
//! composite frame whose tokens are pulled from preceding frames.

use crate::error::{dim_err, Error, Result};
use crate::nn::Linear;
use crate::numerics::{Scalar, Tensor};
use crate::params::ParamBuilder;

/// Which preceding frame each spatial token is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShiftSpec {
    pub window: usize,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self { window: 2 }
    }
}

impl ShiftSpec {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("shift window must be at least 1".into()));
        }
        Ok(Self { window })
    }

    /// Offset in `1..=window` for token `p`, cycling over token index.
    pub fn offset(&self, p: usize) -> usize {
        1 + p % self.window
    }

    /// Source frame of composite token `(i, p)`.
    pub fn source_frame(&self, i: usize, p: usize) -> usize {
        i.saturating_sub(self.offset(p))
    }

    /// Row indices into a `[B*L*N]` token table that assemble the composite frames.
    pub fn gather_rows(&self, batch: usize, frames: usize, tokens: usize) -> Vec<usize> {
        let mut rows = Vec::with_capacity(batch * frames * tokens);
        for b in 0..batch {
            for i in 0..frames {
                for p in 0..tokens {
                    rows.push((b * frames + self.source_frame(i, p)) * tokens + p);
                }
            }
        }
        rows
    }
}

/// Composite frames for tokens `[L, N, d]` (or `[B, L, N, d]`):
/// `out[i][p] = x[max(i - off(p), 0)][p]`.
pub fn temporal_shift_compose<S: Scalar>(x: &Tensor<S>, spec: &ShiftSpec) -> Result<Tensor<S>> {
    let (b, l, n, d) = video_dims(x)?;
    let rows = x.reshape(&[b * l * n, d])?.index_select(&spec.gather_rows(b, l, n))?;
    rows.reshape(x.shape())
}

fn video_dims<S: Scalar>(x: &Tensor<S>) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [l, n, d] => Ok((1, l, n, d)),
        [b, l, n, d] => Ok((b, l, n, d)),
        _ => Err(dim_err!("expected tokens [L,N,d] or [B,L,N,d], got {:?}", x.shape())),
    }
}

/// How self-attention mixes frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnVariant {
    /// Every token of a clip attends to every token of the clip.
    GlobalSt,
    /// Frames attend only to themselves.
    Framewise,
    /// Frame plus shifted composite frame.
    Lsa(ShiftSpec),
}

impl AttnVariant {
    pub fn name(&self) -> &'static str {
        match self {
            AttnVariant::GlobalSt => "global_st",
            AttnVariant::Framewise => "framewise",
            AttnVariant::Lsa(_) => "lsa",
        }
    }
}

/// Score plus aggregation multiply-accumulates for one self-attention layer.
pub fn attention_cost(l: u64, n: u64, d: u64, variant: AttnVariant) -> u64 {
    match variant {
        AttnVariant::GlobalSt => 2 * (l * n) * (l * n) * d,
        AttnVariant::Framewise => 2 * l * n * n * d,
        AttnVariant::Lsa(_) => 2 * l * n * (2 * n) * d,
    }
}

/// Scaled dot-product attention on grouped rows: `q [G, N, dh]`,
/// `k, v [G, M, dh]` -> `[G, N, dh]`.
pub fn attend<S: Scalar>(q: &Tensor<S>, k: &Tensor<S>, v: &Tensor<S>) -> Result<Tensor<S>> {
    let dh = q.dim(2);
    let scores = q.bmm(k, true)?.scale(1.0 / (dh as f64).sqrt());
    scores.softmax(2)?.bmm(v, false)
}

fn split_heads<S: Scalar>(x: &Tensor<S>, heads: usize) -> Result<Tensor<S>> {
    let (g, n, d) = (x.dim(0), x.dim(1), x.dim(2));
    if heads == 1 {
        return Ok(x.clone());
    }
    x.reshape(&[g, n, heads, d / heads])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[g * heads, n, d / heads])
}

fn merge_heads<S: Scalar>(x: &Tensor<S>, heads: usize) -> Result<Tensor<S>> {
    if heads == 1 {
        return Ok(x.clone());
    }
    let (gh, n, dh) = (x.dim(0), x.dim(1), x.dim(2));
    x.reshape(&[gh / heads, heads, n, dh])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[gh / heads, n, heads * dh])
}

/// Self-attention projections shared by every variant (inherited, frozen).
#[derive(Clone)]
pub struct Attention<S: Scalar = f32> {
    pub wq: Linear<S>,
    pub wk: Linear<S>,
    pub wv: Linear<S>,
    pub wo: Linear<S>,
    pub heads: usize,
}

impl<S: Scalar> Attention<S> {
    pub fn new(pb: &ParamBuilder<S>, d: usize, heads: usize) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("{heads} heads do not divide width {d}")));
        }
        Ok(Self {
            wq: Linear::new(&pb.pp("to_q"), d, d, false)?,
            wk: Linear::new(&pb.pp("to_k"), d, d, false)?,
            wv: Linear::new(&pb.pp("to_v"), d, d, false)?,
            wo: Linear::new(&pb.pp("to_out"), d, d, true)?,
            heads,
        })
    }

    pub fn width(&self) -> usize {
        self.wq.d_in()
    }

    /// Attention of `x [B, L, N, d]` under `variant`; output has the input's shape.
    pub fn forward(&self, x: &Tensor<S>, variant: AttnVariant) -> Result<Tensor<S>> {
        let (b, l, n, d) = video_dims(x)?;
        if d != self.width() {
            return Err(dim_err!("attention of width {} got tokens {:?}", self.width(), x.shape()));
        }
        let groups = match variant {
            AttnVariant::GlobalSt => (b, l * n),
            _ => (b * l, n),
        };
        let flat = x.reshape(&[groups.0, groups.1, d])?;
        let q = self.wq.forward(&flat)?;
        let k = self.wk.forward(&flat)?;
        let v = self.wv.forward(&flat)?;
        let (k, v) = match variant {
            AttnVariant::Lsa(spec) => {
                // Projection is per token, so projecting the composite equals
                // composing the projections.
                let rows = spec.gather_rows(b, l, n);
                let shift = |t: &Tensor<S>| -> Result<Tensor<S>> {
                    let c = t.reshape(&[b * l * n, d])?.index_select(&rows)?.reshape(&[b * l, n, d])?;
                    Tensor::concat(&[t.clone(), c], 1)
                };
                (shift(&k)?, shift(&v)?)
            }
            _ => (k, v),
        };
        let h = self.heads;
        let out = attend(&split_heads(&q, h)?, &split_heads(&k, h)?, &split_heads(&v, h)?)?;
        self.wo.forward(&merge_heads(&out, h)?)?.reshape(x.shape())
    }
}

/// Latent-shift attention over `[L, N, d]` or `[B, L, N, d]` tokens.
pub fn lsa_forward<S: Scalar>(x: &Tensor<S>, weights: &Attention<S>, spec: &ShiftSpec) -> Result<Tensor<S>> {
    weights.forward(x, AttnVariant::Lsa(*spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn compose_table_w2() {
        let spec = ShiftSpec::new(2).unwrap();
        // L=3, N=4, d=1 with value = 10 * frame + token.
        let vals: Vec<f64> = (0..3).flat_map(|i| (0..4).map(move |p| (10 * i + p) as f64)).collect();
        let x = Tensor::<f64>::from_f64(&vals, &[3, 4, 1]).unwrap();
        let out = temporal_shift_compose(&x, &spec).unwrap().to_vec();
        let table = [[0., 1., 2., 3.], [0., 1., 2., 3.], [10., 1., 12., 3.]];
        for i in 0..3 {
            for p in 0..4 {
                assert_eq!(out[i * 4 + p], table[i][p], "i={i} p={p}");
            }
        }
    }

    #[test]
    fn window_one_is_previous_frame() {
        let spec = ShiftSpec::new(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f32>::randn(&[4, 3, 2], &mut rng);
        let out = temporal_shift_compose(&x, &spec).unwrap().to_vec();
        let xv = x.to_vec();
        assert_eq!(&out[..6], &xv[..6]);
        assert_eq!(&out[6..], &xv[..18]);
    }

    #[test]
    fn cost_ratios() {
        let lsa = AttnVariant::Lsa(ShiftSpec::default());
        assert_eq!(attention_cost(16, 64, 1, AttnVariant::GlobalSt) / 2, 1_048_576);
        assert_eq!(attention_cost(16, 64, 1, lsa) / 2, 131_072);
        assert_eq!(attention_cost(1, 9, 4, lsa), 2 * attention_cost(1, 9, 4, AttnVariant::Framewise));
        assert_eq!(attention_cost(8, 5, 3, lsa), 2 * attention_cost(4, 5, 3, lsa));
        assert_eq!(attention_cost(8, 5, 3, AttnVariant::GlobalSt), 4 * attention_cost(4, 5, 3, AttnVariant::GlobalSt));
    }

    #[test]
    fn zero_window_rejected() {
        assert!(matches!(ShiftSpec::new(0), Err(Error::Config(_))));
    }
}
