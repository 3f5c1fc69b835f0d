use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::data::to_model_space;
use super::generate::{caption_batch, latents_to_pixels, Guided};
use super::log::LossLog;
use super::model_io::clone_model;
use super::optim::AdamW;
use crate::denoiser::Denoiser;
use crate::diffusion::{ddim_invert, ddim_sample_from, training_loss, SamplerConfig};
use crate::error::{dim_err, Error, Result};
use crate::numerics::{no_grad, Tensor};
use crate::toyworld::{encode_latent, Caption};

pub struct EditOutcome {
    /// Adapter-tuned copy of the input model.
    pub model: Denoiser<f32>,
    pub log: LossLog,
    /// Model-space noise latent found by inversion under the source caption.
    pub inverted: Tensor<f32>,
    /// Sample from the inverted latent under the source caption, `[L, 3, H, W]`.
    pub reconstruction: Tensor<f32>,
    /// Sample from the inverted latent under the edited caption.
    pub edited: Tensor<f32>,
}

/// Tunes the adapters of a copy of `model` on one clip, inverts the clip
/// under its caption and re-samples it under `edited_caption`.
pub fn one_shot_edit(
    model: &Denoiser<f32>,
    source: &Tensor<f32>,
    source_caption: &str,
    edited_caption: &str,
    cfg: &RunConfig,
    steps: usize,
) -> Result<EditOutcome> {
    if model.video_options().is_none() {
        return Err(Error::Usage("editing needs a video model".into()));
    }
    if source.rank() != 4 || source.dim(1) != 3 {
        return Err(dim_err!("source clip must be [L, 3, H, W], got {:?}", source.shape()));
    }
    let src_cap = Caption::parse(source_caption)?;
    let edit_cap = Caption::parse(edited_caption)?;
    let tuned = clone_model(model)?;
    let sched = cfg.schedule()?;
    let lat = to_model_space(&encode_latent(source)?);
    let mut shape = vec![1];
    shape.extend_from_slice(lat.shape());
    let x0 = lat.reshape(&shape)?;

    let snapshot = tuned.params().frozen_snapshot();
    let mut opt = AdamW::new(cfg.edit_lr, cfg.train.beta1, cfg.train.beta2, cfg.train.weight_decay)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut log = LossLog::default();
    let start = Instant::now();
    for step in 1..=steps {
        let text = caption_batch(&tuned, &src_cap, 1)?;
        let loss = training_loss(&tuned, &x0, &text, &sched, &mut rng)?;
        let lv = loss.item()? as f64;
        if !lv.is_finite() {
            return Err(Error::Divergence(format!("edit tuning loss became {lv} at step {step}")));
        }
        tuned.params().zero_grads();
        loss.backward()?;
        opt.step(tuned.params());
        log.push(step, lv, start.elapsed().as_millis() as u64);
    }
    tuned.params().zero_grads();
    tuned.params().verify_frozen(&snapshot)?;

    let sampler = SamplerConfig {
        eta: 0.0,
        ..cfg.sampler.clone()
    };
    let guided = Guided {
        model: &tuned,
        scale: cfg.guidance_scale,
    };
    let (inverted, reconstruction, edited) = no_grad(|| -> Result<_> {
        let src_text = caption_batch(&tuned, &src_cap, 1)?;
        let edit_text = caption_batch(&tuned, &edit_cap, 1)?;
        let inv = ddim_invert(&tuned, &x0, &src_text, &sampler, &sched)?;
        let rec = ddim_sample_from(&guided, &inv, &src_text, &sampler, &sched)?;
        let ed = ddim_sample_from(&guided, &inv, &edit_text, &sampler, &sched)?;
        Ok((inv, latents_to_pixels(&rec)?, latents_to_pixels(&ed)?))
    })?;
    Ok(EditOutcome {
        model: tuned,
        log,
        inverted,
        reconstruction,
        edited,
    })
}

/// Mean of colour channel `channel` over the pixels selected by the per-frame masks.
pub fn masked_channel_mean(pixels: &Tensor<f32>, masks: &[Vec<bool>], channel: usize) -> Result<f64> {
    let (l, c, h, w) = match *pixels.shape() {
        [l, c, h, w] => (l, c, h, w),
        _ => return Err(dim_err!("expected pixels [L, 3, H, W], got {:?}", pixels.shape())),
    };
    if masks.len() != l || channel >= c || masks.iter().any(|m| m.len() != h * w) {
        return Err(dim_err!("masks do not match clip {:?}", pixels.shape()));
    }
    let d = pixels.data();
    let (mut acc, mut n) = (0.0, 0usize);
    for (i, m) in masks.iter().enumerate() {
        let base = (i * c + channel) * h * w;
        for (j, _) in m.iter().enumerate().filter(|(_, on)| **on) {
            acc += d[base + j] as f64;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Usage("empty mask".into()));
    }
    Ok(acc / n as f64)
}

/// Mean absolute difference between two equally shaped tensors.
pub fn mean_abs_diff(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(dim_err!("shapes {:?} and {:?} differ", a.shape(), b.shape()));
    }
    let (x, y) = (a.data(), b.data());
    Ok(x.iter().zip(y.iter()).map(|(p, q)| (p - q).abs() as f64).sum::<f64>() / x.len() as f64)
}
