use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::data::from_model_space;
use crate::denoiser::Denoiser;
use crate::diffusion::{ddim_sample, EpsModel, SamplerConfig};
use crate::error::{Error, Result};
use crate::numerics::{no_grad, Tensor};
use crate::toyworld::{decode_latent, ppm::write_frames, Caption, LATENT_CHANNELS, MAX_TOKENS, PAD, PATCH};

/// Classifier-free guidance around a denoiser: `e_u + s (e_c - e_u)`, where
/// `e_u` uses the empty caption. A scale of 1 calls the model once.
pub struct Guided<'a> {
    pub model: &'a Denoiser<f32>,
    pub scale: f64,
}

impl EpsModel<f32> for Guided<'_> {
    fn predict_eps(&self, x_t: &Tensor<f32>, text: &Tensor<f32>, t: &[usize]) -> Result<Tensor<f32>> {
        let cond = self.model.forward(x_t, text, t)?;
        if self.scale == 1.0 {
            return Ok(cond);
        }
        let empty = self.model.text.embed_tokens(&vec![vec![PAD; MAX_TOKENS]; t.len()])?;
        let uncond = self.model.forward(x_t, &empty, t)?;
        uncond.add(&cond.sub(&uncond)?.scale(self.scale))
    }
}

/// Caption embedding repeated `n` times: `[n, K, e]`.
pub fn caption_batch(model: &Denoiser<f32>, caption: &Caption, n: usize) -> Result<Tensor<f32>> {
    let refs = vec![caption; n];
    model.text.embed(&refs)
}

/// Model-space latent extents for a `height x width` pixel canvas.
pub fn latent_extent(model: &Denoiser<f32>, height: usize, width: usize) -> Result<(usize, usize)> {
    let scale = PATCH << (model.config().widths.len() - 1);
    if height == 0 || width == 0 || height % scale != 0 || width % scale != 0 {
        return Err(Error::Config(format!("canvas {height}x{width} must be a positive multiple of {scale}")));
    }
    Ok((height / PATCH, width / PATCH))
}

/// Model-space latents to pixels `[L, 3, H, W]`.
pub fn latents_to_pixels(latents: &Tensor<f32>) -> Result<Tensor<f32>> {
    let s = latents.shape();
    let (c, h, w) = (s[s.len() - 3], s[s.len() - 2], s[s.len() - 1]);
    let frames = latents.numel() / (c * h * w);
    decode_latent(&from_model_space(&latents.reshape(&[frames, c, h, w])?)?)
}

/// Samples one clip of `frames` frames for `caption`; returns pixels `[L, 3, H, W]`.
///
/// An image model samples the frames independently under the same caption.
pub fn generate_t2v(model: &Denoiser<f32>, caption: &str, frames: usize, cfg: &RunConfig, sampler: &SamplerConfig) -> Result<Tensor<f32>> {
    if frames == 0 {
        return Err(Error::Config("frames must be positive".into()));
    }
    let cap = Caption::parse(caption)?;
    let (h, w) = latent_extent(model, cfg.data.height, cfg.data.width)?;
    let sched = cfg.schedule()?;
    let guided = Guided {
        model,
        scale: cfg.guidance_scale,
    };
    no_grad(|| {
        let latents = if model.video_options().is_some() {
            let text = caption_batch(model, &cap, 1)?;
            ddim_sample(&guided, &[1, frames, LATENT_CHANNELS, h, w], &text, sampler, &sched)?
        } else {
            let text = caption_batch(model, &cap, frames)?;
            ddim_sample(&guided, &[frames, LATENT_CHANNELS, h, w], &text, sampler, &sched)?
        };
        latents_to_pixels(&latents)
    })
}

/// Manifest entry for a generated clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedRecord {
    pub caption: String,
    pub seed: u64,
    pub ddim_steps: usize,
    pub eta: f64,
    pub frames: Vec<String>,
}

/// Writes `frame_NNN.ppm` files and `manifest.jsonl` into `dir`.
pub fn write_generation(dir: &Path, pixels: &Tensor<f32>, caption: &str, sampler: &SamplerConfig) -> Result<GeneratedRecord> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let frames = write_frames(dir, "frame_", pixels)?;
    let rec = GeneratedRecord {
        caption: caption.to_string(),
        seed: sampler.seed,
        ddim_steps: sampler.num_inference_steps,
        eta: sampler.eta,
        frames,
    };
    let path = dir.join(crate::toyworld::dataset::MANIFEST);
    let line = serde_json::to_string(&rec).map_err(|e| Error::Config(e.to_string()))? + "\n";
    std::fs::write(&path, line).map_err(|e| Error::io(&path, e))?;
    Ok(rec)
}
