use crate::error::{dim_err, Error, Result};
use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::Tensor;

/// Shared normalization kernel. `x` is viewed as `[outer, channels, inner]`;
/// statistics are taken over `(channels/groups) * inner` contiguous values per
/// (outer, group); the affine parameters are per channel.
fn normalize<S: Scalar>(
    name: &'static str,
    x: &Tensor<S>,
    outer: usize,
    channels: usize,
    inner: usize,
    groups: usize,
    eps: f64,
    scale: &Tensor<S>,
    bias: &Tensor<S>,
) -> Result<Tensor<S>> {
    if scale.numel() != channels || bias.numel() != channels {
        return Err(dim_err!("{name}: affine params must have {channels} entries"));
    }
    let cpg = channels / groups;
    let span = cpg * inner;
    let xs = x.data();
    let (gam, bet) = (scale.data(), bias.data());
    let mut out = vec![S::zero(); xs.len()];
    let mut xhat = vec![S::zero(); xs.len()];
    let mut inv_std = vec![S::zero(); outer * groups];
    let eps = S::of(eps);
    let inv_span = S::one() / S::of(span as f64);
    for o in 0..outer {
        for gi in 0..groups {
            let base = (o * channels + gi * cpg) * inner;
            let seg = &xs[base..base + span];
            let mean = seg.iter().copied().sum::<S>() * inv_span;
            let var = seg.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_span;
            let is = S::one() / (var + eps).sqrt();
            inv_std[o * groups + gi] = is;
            for c in 0..cpg {
                let ch = gi * cpg + c;
                for i in 0..inner {
                    let at = base + c * inner + i;
                    let h = (xs[at] - mean) * is;
                    xhat[at] = h;
                    out[at] = h * gam[ch] + bet[ch];
                }
            }
        }
    }
    drop((xs, gam, bet));
    let sc = scale.clone();
    let shape = x.shape().to_vec();
    Ok(Tensor::from_op(
        name,
        out,
        shape,
        vec![x.clone(), scale.clone(), bias.clone()],
        move |g, mask| {
            let gam = sc.data();
            let gx = mask[0].then(|| {
                let mut gx = vec![S::zero(); g.len()];
                for o in 0..outer {
                    for gi in 0..groups {
                        let base = (o * channels + gi * cpg) * inner;
                        let mut sum_d = S::zero();
                        let mut sum_dx = S::zero();
                        for c in 0..cpg {
                            let gm = gam[gi * cpg + c];
                            for i in 0..inner {
                                let at = base + c * inner + i;
                                let d = g[at] * gm;
                                sum_d += d;
                                sum_dx += d * xhat[at];
                            }
                        }
                        let (md, mdx) = (sum_d * inv_span, sum_dx * inv_span);
                        let is = inv_std[o * groups + gi];
                        for c in 0..cpg {
                            let gm = gam[gi * cpg + c];
                            for i in 0..inner {
                                let at = base + c * inner + i;
                                gx[at] = is * (g[at] * gm - md - xhat[at] * mdx);
                            }
                        }
                    }
                }
                gx
            });
            let (gs, gb) = if mask[1] || mask[2] {
                let mut gs = vec![S::zero(); channels];
                let mut gb = vec![S::zero(); channels];
                for o in 0..outer {
                    for c in 0..channels {
                        let base = (o * channels + c) * inner;
                        for i in 0..inner {
                            gs[c] += g[base + i] * xhat[base + i];
                            gb[c] += g[base + i];
                        }
                    }
                }
                (mask[1].then_some(gs), mask[2].then_some(gb))
            } else {
                (None, None)
            };
            vec![gx, gs, gb]
        },
    ))
}

impl<S: Scalar> Tensor<S> {
    /// Group normalization of `[N, C, ...]` with per-channel affine.
    pub fn group_norm(&self, groups: usize, eps: f64, scale: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
        if self.rank() < 2 {
            return Err(dim_err!("group_norm expects [N, C, ...], got {:?}", self.shape()));
        }
        let channels = self.dim(1);
        if groups == 0 || channels % groups != 0 {
            return Err(Error::Config(format!(
                "{channels} channels are not divisible into {groups} groups"
            )));
        }
        let outer = self.dim(0);
        let inner = self.numel() / (outer * channels).max(1);
        normalize("group_norm", self, outer, channels, inner, groups, eps, scale, bias)
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&self, eps: f64, scale: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
        if self.rank() == 0 {
            return Err(dim_err!("layer_norm on a scalar"));
        }
        let d = *self.shape().last().unwrap();
        let rows = self.numel() / d.max(1);
        // one group spanning the row; channels = d with inner = 1
        normalize("layer_norm", self, rows, d, 1, 1, eps, scale, bias)
    }
}
