use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::data::{to_model_space, Corpus};
use super::generate::{caption_batch, latents_to_pixels};
use super::log::LossLog;
use super::optim::AdamW;
use super::train::{CheckpointHook, TrainOutcome};
use crate::denoiser::{build_image_denoiser, inflate_to_video, Denoiser, SrConditioning};
use crate::diffusion::{ddim_sample, q_sample, training_loss, NoiseSchedule, SamplerConfig};
use crate::error::{dim_err, Error, Result};
use crate::numerics::{no_grad, Tensor};
use crate::toyworld::{encode_latent, Caption, LATENT_CHANNELS};

/// Upscaling factor of the cascaded stage.
pub const SR_FACTOR: usize = 4;
const AUG_SEED: u64 = 0x5afe_a097;

/// What the upsampler learns to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrTask {
    /// High-resolution clips from their box-downsampled versions.
    Upscale,
    /// Targets replaced by the nearest upsampling of the low input.
    Identity,
}

/// Box average over `factor x factor` cells of `[.., 3, H, W]` pixels.
pub fn downsample_box(pixels: &Tensor<f32>, factor: usize) -> Result<Tensor<f32>> {
    let s = pixels.shape().to_vec();
    if s.len() < 2 {
        return Err(dim_err!("cannot downsample {s:?}"));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(dim_err!("extent {h}x{w} is not divisible by {factor}"));
    }
    let (oh, ow) = (h / factor, w / factor);
    let planes = pixels.numel() / (h * w);
    let d = pixels.data();
    let mut out = vec![0f32; planes * oh * ow];
    let norm = 1.0 / (factor * factor) as f32;
    for p in 0..planes {
        for y in 0..h {
            for x in 0..w {
                out[(p * oh + y / factor) * ow + x / factor] += d[(p * h + y) * w + x] * norm;
            }
        }
    }
    let mut os = s;
    let n = os.len();
    os[n - 2] = oh;
    os[n - 1] = ow;
    Tensor::from_vec(out, &os)
}

fn upsample(pixels: &Tensor<f32>) -> Result<Tensor<f32>> {
    let s = pixels.shape();
    let (c, h, w) = (s[s.len() - 3], s[s.len() - 2], s[s.len() - 1]);
    let frames = pixels.numel() / (c * h * w);
    pixels.reshape(&[frames, c, h, w])?.upsample_nearest(SR_FACTOR)
}

/// Clean model-space conditioning latent `[F, 48, h, w]` for low-resolution pixels.
pub fn conditioning_latent(low: &Tensor<f32>) -> Result<Tensor<f32>> {
    Ok(to_model_space(&encode_latent(&upsample(low)?)?))
}

/// Noise-augments `cond` (`[B, L, 48, h, w]`) at level `u` per clip.
fn augment(cond: &Tensor<f32>, levels: &[f64], sched: &NoiseSchedule, rng: &mut ChaCha8Rng) -> Result<Tensor<f32>> {
    let b = cond.dim(0);
    let per = cond.numel() / b;
    let mut parts = Vec::with_capacity(b);
    for (i, &u) in levels.iter().enumerate() {
        let c = cond.reshape(&[b, per])?.narrow(0, i, 1)?;
        let t = (u * sched.steps() as f64).round() as usize;
        parts.push(if t == 0 {
            c
        } else {
            q_sample(&c, t, &Tensor::randn(c.shape(), rng), sched)?
        });
    }
    Tensor::concat(&parts, 0)?.reshape(cond.shape())
}

fn pixels_batch(corpus: &Corpus, idx: &[usize]) -> Result<(Tensor<f32>, Vec<Caption>)> {
    let mut parts = Vec::new();
    let mut caps = Vec::new();
    for &i in idx {
        let v = corpus.video(i)?;
        let mut s = vec![1];
        s.extend_from_slice(v.pixels.shape());
        parts.push(v.pixels.reshape(&s)?);
        caps.push(v.caption);
    }
    Ok((Tensor::concat(&parts, 0)?, caps))
}

/// Fresh upsampler with the video architecture; every tensor trains.
pub fn build_superres(cfg: &RunConfig) -> Result<Denoiser<f32>> {
    let base = build_image_denoiser::<f32>(&cfg.model.clone().superres())?;
    let mut m = inflate_to_video(&base, cfg.video)?;
    m.params_mut().relabel(|_| true);
    Ok(m)
}

pub fn superres_train(cfg: &RunConfig, task: SrTask, on_ckpt: CheckpointHook) -> Result<TrainOutcome> {
    let model = build_superres(cfg)?;
    let sched = cfg.schedule()?;
    let corpus = Corpus::new(&cfg.data)?;
    let t = &cfg.train;
    let mut opt = AdamW::new(t.lr, t.beta1, t.beta2, t.weight_decay)?;
    let mut rng = ChaCha8Rng::seed_from_u64(t.seed);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(t.seed ^ AUG_SEED);
    let mut log = LossLog::default();
    let start = Instant::now();
    for step in 1..=t.steps {
        let idx: Vec<usize> = (0..t.batch_size).map(|_| rng.gen_range(0..corpus.len())).collect();
        let (high, caps) = pixels_batch(&corpus, &idx)?;
        let low = downsample_box(&high, SR_FACTOR)?;
        let shape = high.shape().to_vec();
        let cond = conditioning_latent(&low)?;
        let target = match task {
            SrTask::Upscale => to_model_space(&encode_latent(&high.reshape(&[shape[0] * shape[1], 3, shape[3], shape[4]])?)?),
            SrTask::Identity => cond.clone(),
        };
        let (b, l) = (shape[0], shape[1]);
        let lshape = [b, l, LATENT_CHANNELS, target.dim(2), target.dim(3)];
        let x0 = target.reshape(&lshape)?;
        let levels: Vec<f64> = (0..b).map(|_| aug_rng.gen::<f64>() * cfg.sr_noise_max).collect();
        let sr = SrConditioning {
            low: augment(&cond.reshape(&lshape)?, &levels, &sched, &mut aug_rng)?,
            noise_level: levels,
        };
        let refs: Vec<&Caption> = caps.iter().collect();
        let text = model.text.embed(&refs)?;
        let eps_model = |x: &Tensor<f32>, c: &Tensor<f32>, ts: &[usize]| model.forward_full(x, c, ts, Some(&sr));
        let loss = training_loss(&eps_model, &x0, &text, &sched, &mut rng)?;
        let lv = loss.item()? as f64;
        if !lv.is_finite() {
            return Err(Error::Divergence(format!("loss became {lv} at step {step}")));
        }
        model.params().zero_grads();
        loss.backward()?;
        opt.step(model.params());
        log.push(step, lv, start.elapsed().as_millis() as u64);
        if t.ckpt_every > 0 && step % t.ckpt_every == 0 {
            on_ckpt(step, &model)?;
        }
    }
    model.params().zero_grads();
    let budget = model.params().count();
    Ok(TrainOutcome {
        model,
        log,
        validation: Vec::new(),
        budget,
    })
}

/// Upscales `low` (`[L, 3, h, w]`) by [`SR_FACTOR`]; the conditioning is used
/// without augmentation.
pub fn superres_apply(model: &Denoiser<f32>, low: &Tensor<f32>, caption: &str, cfg: &RunConfig, sampler: &SamplerConfig) -> Result<Tensor<f32>> {
    if model.config().cond_channels != LATENT_CHANNELS || model.video_options().is_none() {
        return Err(Error::Usage("model is not a video super-resolution model".into()));
    }
    let (l, h, w) = match *low.shape() {
        [l, 3, h, w] => (l, h, w),
        _ => return Err(dim_err!("low-resolution clip must be [L, 3, h, w], got {:?}", low.shape())),
    };
    let scale = 1usize << (model.config().widths.len() - 1);
    if h % scale != 0 || w % scale != 0 {
        return Err(dim_err!("low-resolution extent {h}x{w} must be a multiple of {scale}"));
    }
    let cap = Caption::parse(caption)?;
    let sched = cfg.schedule()?;
    no_grad(|| {
        let cond = conditioning_latent(low)?.reshape(&[1, l, LATENT_CHANNELS, h, w])?;
        let sr = SrConditioning {
            low: cond,
            noise_level: vec![0.0],
        };
        let text = caption_batch(model, &cap, 1)?;
        let eps_model = |x: &Tensor<f32>, c: &Tensor<f32>, ts: &[usize]| model.forward_full(x, c, ts, Some(&sr));
        let out = ddim_sample(&eps_model, &[1, l, LATENT_CHANNELS, h, w], &text, sampler, &sched)?;
        latents_to_pixels(&out)
    })
}
