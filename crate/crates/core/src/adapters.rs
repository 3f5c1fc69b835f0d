//! Bottleneck adapters and the frozen/trainable split.

use crate::error::{dim_err, Error, Result};
use crate::nn::Linear;
use crate::numerics::{Scalar, Tensor};
use crate::params::{is_adapter_name, Init, ParamBuilder, ParamCount, ParamSet};

/// Bottleneck width for a residual stream of width `d` at `ratio`.
pub fn bottleneck_width(d: usize, ratio: usize) -> Result<usize> {
    let l = d / ratio.max(1);
    if ratio == 0 || l == 0 || l >= d {
        return Err(Error::Config(format!(
            "adapter ratio {ratio} gives bottleneck {l} for width {d}; need 1 <= l < d"
        )));
    }
    Ok(l)
}

/// `x + up(gelu(down(x)))` over the last axis. The up layer starts at zero.
#[derive(Clone)]
pub struct SpatialAdapter<S: Scalar = f32> {
    pub down: Linear<S>,
    pub up: Linear<S>,
}

impl<S: Scalar> SpatialAdapter<S> {
    pub fn new(pb: &ParamBuilder<S>, d: usize, l: usize) -> Result<Self> {
        if l == 0 || l >= d {
            return Err(Error::Config(format!("spatial adapter needs 1 <= l < d, got l={l}, d={d}")));
        }
        Ok(Self {
            down: Linear::new(&pb.pp("down"), d, l, true)?,
            up: Linear::with_init(&pb.pp("up"), l, d, true, Init::Zeros, Init::Zeros)?,
        })
    }

    /// Adapter from explicit weights (any widths, used for degenerate checks).
    pub fn from_linears(down: Linear<S>, up: Linear<S>) -> Result<Self> {
        if down.d_out() != up.d_in() || down.d_in() != up.d_out() {
            return Err(dim_err!(
                "adapter layers {}->{} and {}->{} do not chain",
                down.d_in(),
                down.d_out(),
                up.d_in(),
                up.d_out()
            ));
        }
        Ok(Self { down, up })
    }

    pub fn width(&self) -> usize {
        self.down.d_in()
    }

    /// The residual branch alone.
    pub fn branch(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.check(x)?;
        self.up.forward(&self.down.forward(x)?.gelu())
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        x.add(&self.branch(x)?)
    }

    fn check(&self, x: &Tensor<S>) -> Result<()> {
        if x.rank() == 0 || x.dim(x.rank() - 1) != self.width() {
            return Err(dim_err!("spatial adapter of width {} got {:?}", self.width(), x.shape()));
        }
        Ok(())
    }
}

/// `x + up(dwconv3d(down(x)))` with the channel maps applied per frame and pixel.
#[derive(Clone)]
pub struct TemporalAdapter<S: Scalar = f32> {
    pub down: Linear<S>,
    /// Depthwise kernel `[l, kT, kH, kW]`.
    pub kernel: Tensor<S>,
    pub up: Linear<S>,
}

impl<S: Scalar> TemporalAdapter<S> {
    pub const KERNEL: [usize; 3] = [3, 1, 1];

    pub fn new(pb: &ParamBuilder<S>, d: usize, l: usize) -> Result<Self> {
        if l == 0 || l >= d {
            return Err(Error::Config(format!("temporal adapter needs 1 <= l < d, got l={l}, d={d}")));
        }
        let [kt, kh, kw] = Self::KERNEL;
        let bound = 1.0 / ((kt * kh * kw) as f64).sqrt();
        Ok(Self {
            down: Linear::new(&pb.pp("down"), d, l, true)?,
            kernel: pb.get("conv.weight", &[l, kt, kh, kw], Init::Uniform(bound))?,
            up: Linear::with_init(&pb.pp("up"), l, d, true, Init::Zeros, Init::Zeros)?,
        })
    }

    pub fn from_parts(down: Linear<S>, kernel: Tensor<S>, up: Linear<S>) -> Result<Self> {
        if down.d_out() != up.d_in() || down.d_in() != up.d_out() {
            return Err(dim_err!("temporal adapter layers do not chain"));
        }
        if kernel.rank() != 4 || kernel.dim(0) != down.d_out() {
            return Err(dim_err!("temporal kernel {:?} vs bottleneck {}", kernel.shape(), down.d_out()));
        }
        Ok(Self { down, kernel, up })
    }

    pub fn width(&self) -> usize {
        self.down.d_in()
    }

    /// Residual branch on a video `[L, d, H, W]` or batch `[B, L, d, H, W]`.
    pub fn branch(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let shape = x.shape().to_vec();
        let (frames, c, h, w) = match shape[..] {
            [l, c, h, w] => (l, c, h, w),
            [b, l, c, h, w] => (b * l, c, h, w),
            _ => return Err(dim_err!("temporal adapter expects [L,d,H,W] or [B,L,d,H,W], got {shape:?}")),
        };
        if c != self.width() {
            return Err(dim_err!("temporal adapter of width {} got {c} channels", self.width()));
        }
        let l = self.down.d_out();
        let down = self.down.forward_channels(&x.reshape(&[frames, c, h, w])?)?;
        let mut vshape = shape.clone();
        let rank = vshape.len();
        vshape[rank - 3] = l;
        let mixed = down.reshape(&vshape)?.depthwise_conv3d(&self.kernel)?;
        self.up
            .forward_channels(&mixed.reshape(&[frames, l, h, w])?)?
            .reshape(&shape)
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        x.add(&self.branch(x)?)
    }
}

/// Recomputes the frozen/trainable split from parameter names: adapter-site
/// tensors train, everything inherited stays frozen.
pub fn partition_params<S: Scalar>(params: &mut ParamSet<S>) -> Result<()> {
    if let Some(bad) = params.names().into_iter().find(|n| n.is_empty()) {
        return Err(Error::Construction(format!("unnamed parameter `{bad}`")));
    }
    params.relabel(is_adapter_name);
    Ok(())
}

pub fn count_params<S: Scalar>(params: &ParamSet<S>) -> ParamCount {
    params.count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lin(w: &[f64], b: &[f64], d_in: usize, d_out: usize) -> Linear<f64> {
        Linear {
            weight: Tensor::from_f64(w, &[d_in, d_out]).unwrap(),
            bias: Some(Tensor::from_f64(b, &[d_out]).unwrap()),
        }
    }

    #[test]
    fn degenerate_unit_adapter() {
        let a = SpatialAdapter::from_linears(lin(&[1.0], &[0.0], 1, 1), lin(&[1.0], &[0.0], 1, 1)).unwrap();
        let x = Tensor::<f64>::from_f64(&[1.0], &[1, 1]).unwrap();
        let y = a.forward(&x).unwrap().to_vec()[0];
        let oracle = 1.0 + 0.5 * (1.0 + libm::erf(1.0 / 2f64.sqrt()));
        assert!((y - oracle).abs() < 1e-12);
        assert!((y - 1.841345).abs() < 1e-6);
    }

    #[test]
    fn fresh_adapters_are_identity() {
        let pb = ParamBuilder::<f32>::fresh(1);
        let s = SpatialAdapter::new(&pb.pp("attn_adapter"), 16, 2).unwrap();
        let t = TemporalAdapter::new(&pb.pp("temporal_adapter"), 16, 2).unwrap();
        let mut rng = rand::rngs::mock::StepRng::new(1, 7);
        let x = Tensor::<f32>::rand_uniform(&[5, 16], -3.0, 3.0, &mut rng);
        assert_eq!(s.forward(&x).unwrap().to_vec(), x.to_vec());
        let v = Tensor::<f32>::rand_uniform(&[3, 16, 2, 2], -3.0, 3.0, &mut rng);
        assert_eq!(t.forward(&v).unwrap().to_vec(), v.to_vec());
    }

    #[test]
    fn bottleneck_must_shrink() {
        assert!(bottleneck_width(32, 8).is_ok());
        assert!(matches!(bottleneck_width(4, 8), Err(Error::Config(_))));
        assert!(matches!(bottleneck_width(4, 1), Err(Error::Config(_))));
    }

    #[test]
    fn partition_by_name() {
        let mut ps = ParamSet::<f32>::new();
        ps.insert("block.temporal_adapter.up.weight", Tensor::zeros(&[10, 10]), false).unwrap();
        ps.insert("block.conv.weight", Tensor::zeros(&[3]), true).unwrap();
        partition_params(&mut ps).unwrap();
        let c = count_params(&ps);
        assert_eq!((c.trainable, c.frozen, c.total), (100, 3, 103));
        assert!(ps.get("block.temporal_adapter.up.weight").unwrap().requires_grad());
        assert!(!ps.get("block.conv.weight").unwrap().requires_grad());
    }
}
