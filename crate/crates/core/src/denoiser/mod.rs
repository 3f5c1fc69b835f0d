//! Toy latent U-Net: the 2D base, its video inflation and the conditioning
//! plumbing (text, timestep, optional super-resolution inputs).

mod blocks;
mod config;

pub use blocks::{AttnBlock, Frames, ResBlock};
pub use config::{DenoiserConfig, VideoOptions};

use blocks::AttnSetup;

use crate::adapters::partition_params;
use crate::diffusion::EpsModel;
use crate::error::{dim_err, Error, Result};
use crate::evalbench::FrameHead;
use crate::lsa::AttnVariant;
use crate::nn::{Conv2d, GroupNorm, Linear};
use crate::numerics::{Scalar, Tensor};
use crate::params::{Init, ParamBuilder, ParamSet};
use crate::toyworld::TextEncoder;

/// Seed offset for adapter weights drawn at inflation time.
const ADAPTER_SEED: u64 = 0xada9_7e55;

struct Level<S: Scalar> {
    blocks: Vec<(ResBlock<S>, AttnBlock<S>)>,
    downsample: Option<Conv2d<S>>,
}

struct UpLevel<S: Scalar> {
    upconv: Conv2d<S>,
    blocks: Vec<(ResBlock<S>, AttnBlock<S>)>,
}

/// Extra inputs of the cascaded upsampler.
pub struct SrConditioning<S: Scalar = f32> {
    /// Upsampled low-resolution latent, same layout as `x_t`.
    pub low: Tensor<S>,
    /// Augmentation level in `[0, 1]` per batch item.
    pub noise_level: Vec<f64>,
}

pub struct Denoiser<S: Scalar = f32> {
    cfg: DenoiserConfig,
    video: Option<VideoOptions>,
    conv_in: Conv2d<S>,
    time_fc1: Linear<S>,
    time_fc2: Linear<S>,
    noise_fc: Option<Linear<S>>,
    down: Vec<Level<S>>,
    up: Vec<UpLevel<S>>,
    out_norm: GroupNorm<S>,
    out_conv: Conv2d<S>,
    /// Linear path from the input channels straight to the output.
    skip_out: Linear<S>,
    pub text: TextEncoder<S>,
    pub head: FrameHead<S>,
    params: ParamSet<S>,
}

/// Sinusoidal features of `values`: `[sin(v f_i), cos(v f_i)]` with
/// `f_i = 10000^(-i / half)`.
pub fn sinusoidal<S: Scalar>(values: &[f64], dim: usize) -> Result<Tensor<S>> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(values.len() * dim);
    for &v in values {
        let freqs = (0..half).map(|i| (-(10000f64.ln()) * i as f64 / half as f64).exp());
        let args: Vec<f64> = freqs.map(|f| v * f).collect();
        out.extend(args.iter().map(|a| a.sin()));
        out.extend(args.iter().map(|a| a.cos()));
    }
    Tensor::from_f64(&out, &[values.len(), dim])
}

impl<S: Scalar> Denoiser<S> {
    fn build(pb: &ParamBuilder<S>, cfg: &DenoiserConfig, video: Option<VideoOptions>) -> Result<Self> {
        cfg.validate()?;
        let ratio = cfg.adapter_ratio;
        let opt = |on: fn(&VideoOptions) -> bool, d: usize| video.filter(on).map(|_| d / ratio);
        let res = |pb: &ParamBuilder<S>, ci: usize, co: usize| {
            ResBlock::new(pb, ci, co, cfg.temb_dim, cfg.groups, opt(|o| o.temporal_adapter, co))
        };
        let attn = |pb: &ParamBuilder<S>, d: usize| {
            AttnBlock::new(
                pb,
                &AttnSetup {
                    d,
                    text_dim: cfg.text_dim,
                    heads: cfg.heads,
                    ffn_mult: cfg.ffn_mult,
                    attn_adapter: opt(|o| o.attn_adapter, d),
                    ffn_adapter: opt(|o| o.ffn_adapter, d),
                },
            )
        };
        let w = &cfg.widths;
        let conv_in = Conv2d::new(&pb.pp("conv_in"), cfg.input_channels(), w[0], 3, 1)?;
        let time_fc1 = Linear::new(&pb.pp("time_embed.fc1"), cfg.time_dim, cfg.temb_dim, true)?;
        let time_fc2 = Linear::new(&pb.pp("time_embed.fc2"), cfg.temb_dim, cfg.temb_dim, true)?;
        let noise_fc = if cfg.noise_conditioning {
            Some(Linear::new(&pb.pp("noise_embed"), cfg.time_dim, cfg.temb_dim, true)?)
        } else {
            None
        };
        let mut down = Vec::new();
        let mut prev = w[0];
        for (i, &wi) in w.iter().enumerate() {
            let lp = pb.pp(format!("down.{i}"));
            let mut blocks = Vec::new();
            for b in 0..cfg.blocks_per_res {
                let ci = if b == 0 { prev } else { wi };
                blocks.push((res(&lp.pp(format!("res.{b}")), ci, wi)?, attn(&lp.pp(format!("attn.{b}")), wi)?));
            }
            prev = wi;
            let downsample = if i + 1 < w.len() {
                Some(Conv2d::new(&lp.pp("downsample"), wi, wi, 3, 2)?)
            } else {
                None
            };
            down.push(Level { blocks, downsample });
        }
        let mut up = Vec::new();
        for i in (0..w.len() - 1).rev() {
            let lp = pb.pp(format!("up.{i}"));
            let upconv = Conv2d::new(&lp.pp("upconv"), w[i + 1], w[i], 3, 1)?;
            let mut blocks = Vec::new();
            for b in 0..cfg.blocks_per_res {
                let ci = if b == 0 { 2 * w[i] } else { w[i] };
                blocks.push((res(&lp.pp(format!("res.{b}")), ci, w[i])?, attn(&lp.pp(format!("attn.{b}")), w[i])?));
            }
            up.push(UpLevel { upconv, blocks });
        }
        let out_norm = GroupNorm::new(&pb.pp("out_norm"), cfg.groups, w[0])?;
        let out_conv = Conv2d::new(&pb.pp("conv_out"), w[0], cfg.latent_channels, 3, 1)?;
        // Identity on the noisy latent: at high noise the noise estimate is close to the input.
        let skip_out = Linear::with_init(&pb.pp("skip_out"), cfg.input_channels(), cfg.latent_channels, false, Init::Eye, Init::Zeros)?;
        let text = TextEncoder::new(&pb.pp("text"), cfg.text_dim)?;
        let head = FrameHead::new(&pb.pp("feature_head"), cfg.latent_channels, cfg.feature_dim, cfg.text_dim)?;
        let params = pb.clone().finish()?;
        Ok(Self {
            cfg: cfg.clone(),
            video,
            conv_in,
            time_fc1,
            time_fc2,
            noise_fc,
            down,
            up,
            out_norm,
            out_conv,
            skip_out,
            text,
            head,
            params,
        })
    }

    /// Rebuilds a model from a copy of `params`, keeping the trainable flags
    /// recorded there.
    pub fn from_params(cfg: &DenoiserConfig, video: Option<VideoOptions>, params: &ParamSet<S>) -> Result<Self> {
        let pb = ParamBuilder::load(params);
        let mut model = Self::build(&pb, cfg, video)?;
        for (name, entry) in params.iter() {
            model.params.set_trainable(name, entry.trainable)?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn video_options(&self) -> Option<VideoOptions> {
        self.video
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }

    /// Same weights in another precision (flags preserved).
    pub fn cast<T: Scalar>(&self) -> Result<Denoiser<T>> {
        Denoiser::<T>::from_params(&self.cfg, self.video, &self.params.cast::<T>())
    }

    /// Self-attention mixing used by this model.
    pub fn attn_variant(&self) -> AttnVariant {
        match self.video {
            Some(o) if o.lsa => AttnVariant::Lsa(self.cfg.shift),
            _ => AttnVariant::Framewise,
        }
    }

    pub fn attn_blocks(&self) -> Vec<&AttnBlock<S>> {
        let d = self.down.iter().flat_map(|l| l.blocks.iter().map(|(_, a)| a));
        let u = self.up.iter().flat_map(|l| l.blocks.iter().map(|(_, a)| a));
        d.chain(u).collect()
    }

    pub fn res_blocks(&self) -> Vec<&ResBlock<S>> {
        let d = self.down.iter().flat_map(|l| l.blocks.iter().map(|(r, _)| r));
        let u = self.up.iter().flat_map(|l| l.blocks.iter().map(|(r, _)| r));
        d.chain(u).collect()
    }

    /// Predicted noise for `x_t` shaped `[B, C, H, W]` (single frames) or
    /// `[B, L, C, H, W]` (clips); `text` is `[B, K, e]`, one timestep per item.
    pub fn forward(&self, x: &Tensor<S>, text: &Tensor<S>, t: &[usize]) -> Result<Tensor<S>> {
        self.forward_full(x, text, t, None)
    }

    pub fn forward_full(&self, x: &Tensor<S>, text: &Tensor<S>, t: &[usize], sr: Option<&SrConditioning<S>>) -> Result<Tensor<S>> {
        let cfg = &self.cfg;
        let (frames, c, h, w) = match *x.shape() {
            [b, c, h, w] => (Frames { batch: b, len: 1 }, c, h, w),
            [b, l, c, h, w] => (Frames { batch: b, len: l }, c, h, w),
            _ => return Err(dim_err!("denoiser input must be [B,C,H,W] or [B,L,C,H,W], got {:?}", x.shape())),
        };
        let scale = 1usize << (cfg.widths.len() - 1);
        if c != cfg.latent_channels || h % scale != 0 || w % scale != 0 {
            return Err(dim_err!("denoiser expects {} channels and extents divisible by {scale}, got {:?}", cfg.latent_channels, x.shape()));
        }
        let (b, f) = (frames.batch, frames.count());
        if t.len() != b || text.rank() != 3 || text.dim(0) != b || text.dim(2) != cfg.text_dim {
            return Err(dim_err!("conditioning mismatch: {} timesteps, text {:?} for batch {b}", t.len(), text.shape()));
        }
        let per_frame: Vec<usize> = (0..b).flat_map(|i| std::iter::repeat(i).take(frames.len)).collect();
        let mut inp = x.reshape(&[f, c, h, w])?;
        match (sr, cfg.cond_channels) {
            (None, 0) => {}
            (Some(s), cc) if cc > 0 => {
                if s.low.numel() != f * cc * h * w || s.noise_level.len() != b {
                    return Err(dim_err!("super-resolution conditioning {:?} does not match input {:?}", s.low.shape(), x.shape()));
                }
                inp = Tensor::concat(&[inp, s.low.reshape(&[f, cc, h, w])?], 1)?;
            }
            _ => return Err(Error::Usage("conditioning inputs do not match the model's configuration".into())),
        }
        let (k, e) = (text.dim(1), text.dim(2));
        let text_f = if frames.len == 1 {
            text.clone()
        } else {
            text.reshape(&[b, k * e])?.index_select(&per_frame)?.reshape(&[f, k, e])?
        };
        let tf: Vec<f64> = per_frame.iter().map(|&i| t[i] as f64).collect();
        let mut temb = self.time_fc1.forward(&sinusoidal::<S>(&tf, cfg.time_dim)?)?;
        if let (Some(fc), Some(s)) = (&self.noise_fc, sr) {
            let nl: Vec<f64> = per_frame.iter().map(|&i| s.noise_level[i] * 1000.0).collect();
            temb = temb.add(&fc.forward(&sinusoidal::<S>(&nl, cfg.time_dim)?)?)?;
        }
        let temb = self.time_fc2.forward(&temb.silu())?.silu();
        let variant = self.attn_variant();

        let mut hcur = self.conv_in.forward(&inp)?;
        let mut skips = Vec::new();
        for level in &self.down {
            for (r, a) in &level.blocks {
                hcur = r.forward(&hcur, &temb, frames)?;
                hcur = a.forward(&hcur, &text_f, frames, variant)?;
            }
            if let Some(ds) = &level.downsample {
                skips.push(hcur.clone());
                hcur = ds.forward(&hcur)?;
            }
        }
        for level in &self.up {
            hcur = level.upconv.forward(&hcur.upsample_nearest(2)?)?;
            let skip = skips.pop().expect("one skip per upsampling level");
            hcur = Tensor::concat(&[hcur, skip], 1)?;
            for (r, a) in &level.blocks {
                hcur = r.forward(&hcur, &temb, frames)?;
                hcur = a.forward(&hcur, &text_f, frames, variant)?;
            }
        }
        let out = self
            .out_conv
            .forward(&self.out_norm.forward(&hcur)?.silu())?
            .add(&self.skip_out.forward_channels(&inp)?)?;
        out.reshape(x.shape())
    }
}

impl<S: Scalar> EpsModel<S> for Denoiser<S> {
    fn predict_eps(&self, x_t: &Tensor<S>, text: &Tensor<S>, t: &[usize]) -> Result<Tensor<S>> {
        self.forward(x_t, text, t)
    }
}

/// Fresh 2D base with every parameter trainable (for base pre-training).
pub fn build_image_denoiser<S: Scalar>(cfg: &DenoiserConfig) -> Result<Denoiser<S>> {
    let pb = ParamBuilder::fresh(cfg.seed);
    let mut m = Denoiser::build(&pb, cfg, None)?;
    m.params.relabel(|_| true);
    Ok(m)
}

/// Video model sharing no storage with `image`: inherited weights are copied
/// and frozen, adapters are freshly initialized (output layers at zero) and
/// trainable.
pub fn inflate_to_video<S: Scalar>(image: &Denoiser<S>, opts: VideoOptions) -> Result<Denoiser<S>> {
    if image.video.is_some() {
        return Err(Error::Usage("model is already a video model".into()));
    }
    let pb = ParamBuilder::extend(&image.params, image.cfg.seed ^ ADAPTER_SEED);
    let mut m = Denoiser::build(&pb, &image.cfg, Some(opts))?;
    partition_params(&mut m.params)?;
    Ok(m)
}
