use crate::adapters::bottleneck_width;
use crate::error::{Error, Result};
use crate::lsa::ShiftSpec;
use crate::toyworld::{Vocab, LATENT_CHANNELS};

/// Architecture of the toy latent U-Net.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserConfig {
    /// Channels of the noisy latent (and of the prediction).
    pub latent_channels: usize,
    /// Extra per-frame conditioning channels concatenated to the input (0 for
    /// plain generation, `latent_channels` for super-resolution).
    pub cond_channels: usize,
    /// Spatial extent of the training latent; must be divisible by `2^(levels-1)`.
    pub resolution: usize,
    pub widths: Vec<usize>,
    pub blocks_per_res: usize,
    pub groups: usize,
    pub heads: usize,
    /// Bottleneck `l = d / adapter_ratio`.
    pub adapter_ratio: usize,
    pub shift: ShiftSpec,
    pub text_dim: usize,
    /// Sinusoidal timestep features.
    pub time_dim: usize,
    /// Width of the timestep embedding fed to residual blocks.
    pub temb_dim: usize,
    pub ffn_mult: usize,
    /// Adds an embedded scalar noise level to the timestep embedding.
    pub noise_conditioning: bool,
    /// Output width of the frame feature head.
    pub feature_dim: usize,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            latent_channels: LATENT_CHANNELS,
            cond_channels: 0,
            resolution: 8,
            widths: vec![32, 64],
            blocks_per_res: 1,
            groups: 8,
            heads: 1,
            adapter_ratio: 8,
            shift: ShiftSpec::default(),
            text_dim: 32,
            time_dim: 32,
            temb_dim: 64,
            ffn_mult: 4,
            noise_conditioning: false,
            feature_dim: 32,
            seed: 0,
        }
    }
}

/// Which video-only pieces an inflated model carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VideoOptions {
    pub temporal_adapter: bool,
    pub attn_adapter: bool,
    pub ffn_adapter: bool,
    pub lsa: bool,
}

impl Default for VideoOptions {
    fn default() -> Self {
        Self {
            temporal_adapter: true,
            attn_adapter: true,
            ffn_adapter: true,
            lsa: true,
        }
    }
}

impl DenoiserConfig {
    /// Configuration for the cascaded upsampler: input doubled by the
    /// conditioning latent, noise level embedded.
    pub fn superres(mut self) -> Self {
        self.cond_channels = self.latent_channels;
        self.noise_conditioning = true;
        self
    }

    pub fn input_channels(&self) -> usize {
        self.latent_channels + self.cond_channels
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Construction(m));
        if self.widths.is_empty() || self.blocks_per_res == 0 {
            return fail("need at least one resolution level and one block per level".into());
        }
        if self.latent_channels == 0 || self.text_dim == 0 || self.temb_dim == 0 || self.feature_dim == 0 {
            return fail("all widths must be positive".into());
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return fail(format!("time_dim {} must be even and positive", self.time_dim));
        }
        let scale = 1usize << (self.widths.len() - 1);
        if self.resolution == 0 || self.resolution % scale != 0 {
            return fail(format!("resolution {} not divisible by {scale}", self.resolution));
        }
        for (i, &w) in self.widths.iter().enumerate() {
            if self.groups == 0 || w % self.groups != 0 {
                return fail(format!("width {w} not divisible by {} groups", self.groups));
            }
            if self.heads == 0 || w % self.heads != 0 {
                return fail(format!("width {w} not divisible by {} heads", self.heads));
            }
            bottleneck_width(w, self.adapter_ratio).map_err(|e| Error::Construction(e.to_string()))?;
            if i + 1 < self.widths.len() && (2 * w) % self.groups != 0 {
                return fail(format!("skip width {} not divisible by groups", 2 * w));
            }
        }
        if self.ffn_mult == 0 || self.shift.window == 0 {
            return fail("ffn_mult and shift window must be positive".into());
        }
        Ok(())
    }

    /// Closed-form parameter count, computed from the architecture alone.
    pub fn param_count(&self, video: Option<VideoOptions>) -> usize {
        let lin = |i: usize, o: usize, bias: bool| i * o + if bias { o } else { 0 };
        let conv = |i: usize, o: usize, k: usize| i * o * k * k + o;
        let norm = |c: usize| 2 * c;
        let (e, te) = (self.text_dim, self.temb_dim);
        let v = video.unwrap_or(VideoOptions {
            temporal_adapter: false,
            attn_adapter: false,
            ffn_adapter: false,
            lsa: false,
        });
        let spatial = |d: usize| {
            let l = d / self.adapter_ratio;
            lin(d, l, true) + lin(l, d, true)
        };
        let temporal = |d: usize| {
            let l = d / self.adapter_ratio;
            lin(d, l, true) + 3 * l + lin(l, d, true)
        };
        let res = |ci: usize, co: usize| {
            let mut n = norm(ci) + conv(ci, co, 3) + lin(te, co, true) + norm(co) + conv(co, co, 3);
            if ci != co {
                n += conv(ci, co, 1);
            }
            if video.is_some() && v.temporal_adapter {
                n += temporal(co);
            }
            n
        };
        let attn = |d: usize| {
            let mut n = 3 * norm(d);
            n += 3 * lin(d, d, false) + lin(d, d, true);
            n += lin(d, d, false) + 2 * lin(e, d, false) + lin(d, d, true);
            n += lin(d, self.ffn_mult * d, true) + lin(self.ffn_mult * d, d, true);
            if video.is_some() && v.attn_adapter {
                n += spatial(d);
            }
            if video.is_some() && v.ffn_adapter {
                n += spatial(d);
            }
            n
        };
        let w = &self.widths;
        let mut total = conv(self.input_channels(), w[0], 3);
        total += lin(self.time_dim, te, true) + lin(te, te, true);
        if self.noise_conditioning {
            total += lin(self.time_dim, te, true);
        }
        let mut prev = w[0];
        for (i, &wi) in w.iter().enumerate() {
            for b in 0..self.blocks_per_res {
                total += res(if b == 0 { prev } else { wi }, wi) + attn(wi);
            }
            prev = wi;
            if i + 1 < w.len() {
                total += conv(wi, wi, 3);
            }
        }
        for i in (0..w.len() - 1).rev() {
            total += conv(w[i + 1], w[i], 3);
            for b in 0..self.blocks_per_res {
                total += res(if b == 0 { 2 * w[i] } else { w[i] }, w[i]) + attn(w[i]);
            }
        }
        total += norm(w[0]) + conv(w[0], self.latent_channels, 3);
        total += lin(self.input_channels(), self.latent_channels, false);
        // Text table, frame feature head and its text projection.
        total += Vocab::size() * e;
        total += conv(self.latent_channels, self.feature_dim, 3) + lin(self.feature_dim, e, true) + lin(e, e, true);
        total
    }
}
