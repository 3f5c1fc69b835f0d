use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::data::Corpus;
use super::log::LossLog;
use super::optim::AdamW;
use crate::denoiser::{build_image_denoiser, inflate_to_video, Denoiser};
use crate::diffusion::{training_loss, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numerics::{no_grad, Tensor};
use crate::params::ParamCount;
use crate::toyworld::{Caption, MAX_TOKENS, PAD};

/// Temperature of the frame/caption contrastive objective.
const CONTRASTIVE_TEMPERATURE: f64 = 0.1;
/// Seed of the fixed timesteps and noise used for validation.
const VALIDATION_SEED: u64 = 0x0e7a_1000;

/// Called every `ckpt_every` steps with the step count and current model.
pub type CheckpointHook<'a> = &'a mut dyn FnMut(usize, &Denoiser<f32>) -> Result<()>;

pub struct TrainOutcome {
    pub model: Denoiser<f32>,
    /// Diffusion loss per step.
    pub log: LossLog,
    /// `(step, validation loss)` at the eval cadence and at the end.
    pub validation: Vec<(usize, f64)>,
    pub budget: ParamCount,
}

fn token_rows(caps: &[Caption], dropout: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    caps.iter()
        .map(|c| {
            if dropout > 0.0 && rng.gen::<f64>() < dropout {
                vec![PAD; MAX_TOKENS]
            } else {
                c.tokens.clone()
            }
        })
        .collect()
}

fn check_finite(loss: f64, step: usize) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("loss became {loss} at step {step}")));
    }
    Ok(())
}

/// Symmetric InfoNCE between frame features and caption features.
fn contrastive_loss(model: &Denoiser<f32>, x0: &Tensor<f32>, text: &Tensor<f32>) -> Result<Tensor<f32>> {
    let b = x0.dim(0);
    let f = model.head.frame_features(x0)?.l2_normalize(1e-8)?;
    let t = model.head.text_features(text)?.l2_normalize(1e-8)?;
    let logits = f.matmul(&t.permute(&[1, 0])?)?.scale(1.0 / CONTRASTIVE_TEMPERATURE);
    let targets: Vec<usize> = (0..b).collect();
    let a = logits.cross_entropy(&targets)?;
    let c = logits.permute(&[1, 0])?.cross_entropy(&targets)?;
    Ok(a.add(&c)?.scale(0.5))
}

/// Mean diffusion loss over the validation clips with fixed timesteps and noise.
pub fn validation_loss(model: &Denoiser<f32>, val: &Corpus, batch: usize, sched: &NoiseSchedule) -> Result<f64> {
    no_grad(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(VALIDATION_SEED);
        let idx: Vec<usize> = (0..val.len()).collect();
        let (mut acc, mut n) = (0.0, 0usize);
        for chunk in idx.chunks(batch.max(1)) {
            let (x0, caps) = val.clip_batch(chunk)?;
            let x0 = if model.video_options().is_some() {
                x0
            } else {
                let s = x0.shape().to_vec();
                x0.reshape(&[s[0] * s[1], s[2], s[3], s[4]])?
            };
            let refs: Vec<&Caption> = caps.iter().collect();
            let mut text = model.text.embed(&refs)?;
            if model.video_options().is_none() {
                let (k, e) = (text.dim(1), text.dim(2));
                let l = val.frames;
                let rows: Vec<usize> = (0..caps.len()).flat_map(|i| std::iter::repeat(i).take(l)).collect();
                text = text.reshape(&[caps.len(), k * e])?.index_select(&rows)?.reshape(&[caps.len() * l, k, e])?;
            }
            let loss = training_loss(model, &x0, &text, sched, &mut rng)?.item()? as f64;
            acc += loss * chunk.len() as f64;
            n += chunk.len();
        }
        Ok(acc / n as f64)
    })
}

/// Trains the 2D base (denoiser, text table and frame head) on single frames.
pub fn pretrain_base(cfg: &RunConfig, on_ckpt: CheckpointHook) -> Result<TrainOutcome> {
    let model = build_image_denoiser::<f32>(&cfg.model)?;
    let sched = cfg.schedule()?;
    let corpus = Corpus::new(&cfg.data)?;
    let t = &cfg.train;
    let mut opt = AdamW::new(t.lr, t.beta1, t.beta2, t.weight_decay)?;
    let mut rng = ChaCha8Rng::seed_from_u64(t.seed);
    let mut log = LossLog::default();
    let start = Instant::now();
    for step in 1..=t.steps {
        let picks: Vec<(usize, usize)> = (0..t.batch_size)
            .map(|_| (rng.gen_range(0..corpus.len()), rng.gen_range(0..corpus.frames)))
            .collect();
        let (x0, caps) = corpus.frame_batch(&picks)?;
        let rows = token_rows(&caps, t.cond_dropout, &mut rng);
        let text = model.text.embed_tokens(&rows)?;
        let diff = training_loss(&model, &x0, &text, &sched, &mut rng)?;
        let dv = diff.item()? as f64;
        check_finite(dv, step)?;
        let total = if t.contrastive_weight > 0.0 {
            let clean: Vec<Caption> = caps.clone();
            let refs: Vec<&Caption> = clean.iter().collect();
            let ctext = model.text.embed(&refs)?;
            diff.add(&contrastive_loss(&model, &x0, &ctext)?.scale(t.contrastive_weight))?
        } else {
            diff
        };
        model.params().zero_grads();
        total.backward()?;
        opt.step(model.params());
        log.push(step, dv, start.elapsed().as_millis() as u64);
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

/// Inflates `base`, freezes every inherited tensor and trains the adapters on
/// clips. Frozen tensors are byte-compared at every checkpoint and at the end.
pub fn adapt_train_t2v(base: &Denoiser<f32>, cfg: &RunConfig, on_ckpt: CheckpointHook) -> Result<TrainOutcome> {
    let model = inflate_to_video(base, cfg.video)?;
    let corpus = Corpus::new(&cfg.data)?;
    train_video(model, &corpus, cfg, cfg.train.lr, cfg.train.steps, on_ckpt)
}

/// Adapter-only training of an existing video model on `corpus`.
pub fn train_video(
    model: Denoiser<f32>,
    corpus: &Corpus,
    cfg: &RunConfig,
    lr: f64,
    steps: usize,
    on_ckpt: CheckpointHook,
) -> Result<TrainOutcome> {
    let sched = cfg.schedule()?;
    let t = &cfg.train;
    let snapshot = model.params().frozen_snapshot();
    let val = if t.eval_every > 0 { Some(Corpus::validation(&cfg.data)?) } else { None };
    let mut opt = AdamW::new(lr, t.beta1, t.beta2, t.weight_decay)?;
    let mut rng = ChaCha8Rng::seed_from_u64(t.seed);
    let mut log = LossLog::default();
    let mut validation = Vec::new();
    let start = Instant::now();
    for step in 1..=steps {
        let idx: Vec<usize> = (0..t.batch_size).map(|_| rng.gen_range(0..corpus.len())).collect();
        let (x0, caps) = corpus.clip_batch(&idx)?;
        let rows = token_rows(&caps, t.cond_dropout, &mut rng);
        let text = model.text.embed_tokens(&rows)?;
        let loss = training_loss(&model, &x0, &text, &sched, &mut rng)?;
        let lv = loss.item()? as f64;
        check_finite(lv, step)?;
        model.params().zero_grads();
        loss.backward()?;
        opt.step(model.params());
        log.push(step, lv, start.elapsed().as_millis() as u64);
        if let Some(v) = &val {
            if step % t.eval_every == 0 || step == steps {
                validation.push((step, validation_loss(&model, v, t.batch_size, &sched)?));
            }
        }
        if t.ckpt_every > 0 && step % t.ckpt_every == 0 {
            model.params().verify_frozen(&snapshot)?;
            on_ckpt(step, &model)?;
        }
    }
    model.params().zero_grads();
    model.params().verify_frozen(&snapshot)?;
    let budget = model.params().count();
    Ok(TrainOutcome {
        model,
        log,
        validation,
        budget,
    })
}
