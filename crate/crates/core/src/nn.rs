//! Basic layers built on [`Tensor`] ops.

use crate::error::Result;
use crate::numerics::{Scalar, Tensor};
use crate::params::{Init, ParamBuilder};

/// `y = x W + b` over the last axis; `W` is stored `[in, out]`.
#[derive(Clone)]
pub struct Linear<S: Scalar = f32> {
    pub weight: Tensor<S>,
    pub bias: Option<Tensor<S>>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(pb: &ParamBuilder<S>, d_in: usize, d_out: usize, bias: bool) -> Result<Self> {
        let bound = 1.0 / (d_in as f64).sqrt();
        Self::with_init(pb, d_in, d_out, bias, Init::Uniform(bound), Init::Uniform(bound))
    }

    pub fn with_init(
        pb: &ParamBuilder<S>,
        d_in: usize,
        d_out: usize,
        bias: bool,
        w_init: Init,
        b_init: Init,
    ) -> Result<Self> {
        let weight = pb.get("weight", &[d_in, d_out], w_init)?;
        let bias = if bias {
            Some(pb.get("bias", &[d_out], b_init)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let y = x.matmul(&self.weight)?;
        match &self.bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn d_out(&self) -> usize {
        self.weight.dim(1)
    }

    /// Applies the layer across the channel axis of `[N, C, H, W]` without
    /// leaving the channel-first layout.
    pub fn forward_channels(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (d_in, d_out) = (self.d_in(), self.d_out());
        let w = self.weight.permute(&[1, 0])?.reshape(&[d_out, d_in, 1, 1])?;
        x.conv2d(&w, self.bias.as_ref(), 1, 0)
    }
}

#[derive(Clone)]
pub struct Conv2d<S: Scalar = f32> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
    pub stride: usize,
    pub pad: usize,
}

impl<S: Scalar> Conv2d<S> {
    pub fn new(pb: &ParamBuilder<S>, c_in: usize, c_out: usize, k: usize, stride: usize) -> Result<Self> {
        let bound = 1.0 / ((c_in * k * k) as f64).sqrt();
        Ok(Self {
            weight: pb.get("weight", &[c_out, c_in, k, k], Init::Uniform(bound))?,
            bias: pb.get("bias", &[c_out], Init::Uniform(bound))?,
            stride,
            pad: k / 2,
        })
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        x.conv2d(&self.weight, Some(&self.bias), self.stride, self.pad)
    }
}

#[derive(Clone)]
pub struct GroupNorm<S: Scalar = f32> {
    pub groups: usize,
    pub scale: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> GroupNorm<S> {
    pub const EPS: f64 = 1e-5;

    pub fn new(pb: &ParamBuilder<S>, groups: usize, channels: usize) -> Result<Self> {
        Ok(Self {
            groups,
            scale: pb.get("scale", &[channels], Init::Ones)?,
            bias: pb.get("bias", &[channels], Init::Zeros)?,
        })
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        x.group_norm(self.groups, Self::EPS, &self.scale, &self.bias)
    }
}

#[derive(Clone)]
pub struct LayerNorm<S: Scalar = f32> {
    pub scale: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> LayerNorm<S> {
    pub const EPS: f64 = 1e-5;

    pub fn new(pb: &ParamBuilder<S>, dim: usize) -> Result<Self> {
        Ok(Self {
            scale: pb.get("scale", &[dim], Init::Ones)?,
            bias: pb.get("bias", &[dim], Init::Zeros)?,
        })
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        x.layer_norm(Self::EPS, &self.scale, &self.bias)
    }
}
