use crate::adapters::{SpatialAdapter, TemporalAdapter};
use crate::error::Result;
use crate::lsa::{attend, AttnVariant, Attention};
use crate::nn::{Conv2d, GroupNorm, LayerNorm, Linear};
use crate::numerics::{Scalar, Tensor};
use crate::params::ParamBuilder;

/// Frame layout of a flattened batch: `frames = batch * len`.
#[derive(Debug, Clone, Copy)]
pub struct Frames {
    pub batch: usize,
    pub len: usize,
}

impl Frames {
    pub fn count(&self) -> usize {
        self.batch * self.len
    }
}

pub fn to_tokens<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let (f, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    x.permute(&[0, 2, 3, 1])?.reshape(&[f, h * w, c])
}

pub fn from_tokens<S: Scalar>(t: &Tensor<S>, h: usize, w: usize) -> Result<Tensor<S>> {
    let (f, c) = (t.dim(0), t.dim(2));
    t.reshape(&[f, h, w, c])?.permute(&[0, 3, 1, 2])
}

/// Conv residual block with additive timestep projection; in video mode a
/// temporal adapter follows it.
#[derive(Clone)]
pub struct ResBlock<S: Scalar> {
    norm1: GroupNorm<S>,
    conv1: Conv2d<S>,
    temb_proj: Linear<S>,
    norm2: GroupNorm<S>,
    conv2: Conv2d<S>,
    skip: Option<Conv2d<S>>,
    pub temporal_adapter: Option<TemporalAdapter<S>>,
}

impl<S: Scalar> ResBlock<S> {
    pub fn new(pb: &ParamBuilder<S>, c_in: usize, c_out: usize, temb: usize, groups: usize, adapter: Option<usize>) -> Result<Self> {
        Ok(Self {
            norm1: GroupNorm::new(&pb.pp("norm1"), groups, c_in)?,
            conv1: Conv2d::new(&pb.pp("conv1"), c_in, c_out, 3, 1)?,
            temb_proj: Linear::new(&pb.pp("temb_proj"), temb, c_out, true)?,
            norm2: GroupNorm::new(&pb.pp("norm2"), groups, c_out)?,
            conv2: Conv2d::new(&pb.pp("conv2"), c_out, c_out, 3, 1)?,
            skip: if c_in != c_out {
                Some(Conv2d::new(&pb.pp("skip"), c_in, c_out, 1, 1)?)
            } else {
                None
            },
            temporal_adapter: adapter
                .map(|l| TemporalAdapter::new(&pb.pp("temporal_adapter"), c_out, l))
                .transpose()?,
        })
    }

    /// `x [F, C, H, W]`, `temb [F, temb]` already activated.
    pub fn forward(&self, x: &Tensor<S>, temb: &Tensor<S>, frames: Frames) -> Result<Tensor<S>> {
        let h = self.conv1.forward(&self.norm1.forward(x)?.silu())?;
        let c = h.dim(1);
        let t = self.temb_proj.forward(temb)?.reshape(&[frames.count(), c, 1, 1])?;
        let h = h.add(&t)?;
        let h = self.conv2.forward(&self.norm2.forward(&h)?.silu())?;
        let skip = match &self.skip {
            Some(s) => s.forward(x)?,
            None => x.clone(),
        };
        let y = skip.add(&h)?;
        match &self.temporal_adapter {
            Some(ta) => {
                let (hh, ww) = (y.dim(2), y.dim(3));
                ta.forward(&y.reshape(&[frames.batch, frames.len, c, hh, ww])?)?
                    .reshape(&[frames.count(), c, hh, ww])
            }
            None => Ok(y),
        }
    }
}

/// Frozen text cross-attention: queries from frame tokens, keys and values
/// from the caption embedding.
#[derive(Clone)]
pub struct CrossAttention<S: Scalar> {
    wq: Linear<S>,
    wk: Linear<S>,
    wv: Linear<S>,
    wo: Linear<S>,
    heads: usize,
}

impl<S: Scalar> CrossAttention<S> {
    pub fn new(pb: &ParamBuilder<S>, d: usize, text_dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            wq: Linear::new(&pb.pp("to_q"), d, d, false)?,
            wk: Linear::new(&pb.pp("to_k"), text_dim, d, false)?,
            wv: Linear::new(&pb.pp("to_v"), text_dim, d, false)?,
            wo: Linear::new(&pb.pp("to_out"), d, d, true)?,
            heads,
        })
    }

    /// `x [F, N, d]`, `text [F, K, e]`.
    pub fn forward(&self, x: &Tensor<S>, text: &Tensor<S>) -> Result<Tensor<S>> {
        let q = self.wq.forward(x)?;
        let k = self.wk.forward(text)?;
        let v = self.wv.forward(text)?;
        let h = self.heads;
        let split = |t: &Tensor<S>| -> Result<Tensor<S>> {
            if h == 1 {
                return Ok(t.clone());
            }
            let (g, n, d) = (t.dim(0), t.dim(1), t.dim(2));
            t.reshape(&[g, n, h, d / h])?.permute(&[0, 2, 1, 3])?.reshape(&[g * h, n, d / h])
        };
        let o = attend(&split(&q)?, &split(&k)?, &split(&v)?)?;
        let o = if h == 1 {
            o
        } else {
            let (gh, n, dh) = (o.dim(0), o.dim(1), o.dim(2));
            o.reshape(&[gh / h, h, n, dh])?.permute(&[0, 2, 1, 3])?.reshape(&[gh / h, n, h * dh])?
        };
        self.wo.forward(&o)
    }
}

#[derive(Clone)]
pub struct FeedForward<S: Scalar> {
    fc1: Linear<S>,
    fc2: Linear<S>,
}

impl<S: Scalar> FeedForward<S> {
    pub fn new(pb: &ParamBuilder<S>, d: usize, mult: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(&pb.pp("fc1"), d, mult * d, true)?,
            fc2: Linear::new(&pb.pp("fc2"), mult * d, d, true)?,
        })
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu())
    }
}

/// Self-attention, cross-attention and FFN sub-layers (pre-norm residual).
/// Video mode swaps in latent-shift attention and wraps the self-attention and
/// FFN outputs in spatial adapters.
#[derive(Clone)]
pub struct AttnBlock<S: Scalar> {
    norm1: LayerNorm<S>,
    self_attn: Attention<S>,
    pub attn_adapter: Option<SpatialAdapter<S>>,
    norm2: LayerNorm<S>,
    cross_attn: CrossAttention<S>,
    norm3: LayerNorm<S>,
    ffn: FeedForward<S>,
    pub ffn_adapter: Option<SpatialAdapter<S>>,
}

pub struct AttnSetup {
    pub d: usize,
    pub text_dim: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub attn_adapter: Option<usize>,
    pub ffn_adapter: Option<usize>,
}

impl<S: Scalar> AttnBlock<S> {
    pub fn new(pb: &ParamBuilder<S>, s: &AttnSetup) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(&pb.pp("norm1"), s.d)?,
            self_attn: Attention::new(&pb.pp("self_attn"), s.d, s.heads)?,
            attn_adapter: s
                .attn_adapter
                .map(|l| SpatialAdapter::new(&pb.pp("attn_adapter"), s.d, l))
                .transpose()?,
            norm2: LayerNorm::new(&pb.pp("norm2"), s.d)?,
            cross_attn: CrossAttention::new(&pb.pp("cross_attn"), s.d, s.text_dim, s.heads)?,
            norm3: LayerNorm::new(&pb.pp("norm3"), s.d)?,
            ffn: FeedForward::new(&pb.pp("ffn"), s.d, s.ffn_mult)?,
            ffn_adapter: s
                .ffn_adapter
                .map(|l| SpatialAdapter::new(&pb.pp("ffn_adapter"), s.d, l))
                .transpose()?,
        })
    }

    pub fn attention(&self) -> &Attention<S> {
        &self.self_attn
    }

    /// `x [F, C, H, W]`, `text [F, K, e]`.
    pub fn forward(&self, x: &Tensor<S>, text: &Tensor<S>, frames: Frames, variant: AttnVariant) -> Result<Tensor<S>> {
        let (h, w) = (x.dim(2), x.dim(3));
        let tok = to_tokens(x)?;
        let (n, d) = (tok.dim(1), tok.dim(2));
        let a = self
            .self_attn
            .forward(&self.norm1.forward(&tok)?.reshape(&[frames.batch, frames.len, n, d])?, variant)?
            .reshape(&[frames.count(), n, d])?;
        let a = match &self.attn_adapter {
            Some(ad) => ad.forward(&a)?,
            None => a,
        };
        let tok = tok.add(&a)?;
        let tok = tok.add(&self.cross_attn.forward(&self.norm2.forward(&tok)?, text)?)?;
        let f = self.ffn.forward(&self.norm3.forward(&tok)?)?;
        let f = match &self.ffn_adapter {
            Some(ad) => ad.forward(&f)?,
            None => f,
        };
        from_tokens(&tok.add(&f)?, h, w)
    }
}
