//! Training batches drawn from the synthetic corpus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::DataConfig;
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};
use crate::toyworld::{encode_latent, synth_video, Caption, SceneSpec, Video, OBJECT_SIZE};

/// Seed offset separating validation clips from training clips.
const VALIDATION_SALT: u64 = 0x7a11_da7a;

/// Pixels in `[0, 1]` to the model's `[-1, 1]` latent range.
pub fn to_model_space<S: Scalar>(latent: &Tensor<S>) -> Tensor<S> {
    latent.affine(2.0, -1.0)
}

/// Inverse of [`to_model_space`], clamped to `[0, 1]`.
pub fn from_model_space(x: &Tensor<f32>) -> Result<Tensor<f32>> {
    let d: Vec<f32> = x.data().iter().map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0)).collect();
    Tensor::from_vec(d, x.shape())
}

/// Whether `spec` fits a clip of `l` frames on an `h x w` canvas.
pub fn fits(spec: &SceneSpec, l: usize, h: usize, w: usize) -> bool {
    let (dx, dy) = spec.motion.direction();
    let travel = spec.speed * l.saturating_sub(1);
    let need_x = if dx != 0 { travel } else { 0 } + OBJECT_SIZE;
    let need_y = if dy != 0 { travel } else { 0 } + OBJECT_SIZE;
    need_x <= w && need_y <= h
}

/// Fixed list of `(spec, seed)` clips.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub clips: Vec<(SceneSpec, u64)>,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Corpus {
    pub fn new(cfg: &DataConfig) -> Result<Self> {
        Self::draw(cfg, cfg.num_clips, cfg.data_seed)
    }

    /// Held-out clips drawn from a disjoint seed stream.
    pub fn validation(cfg: &DataConfig) -> Result<Self> {
        Self::draw(cfg, cfg.val_clips.max(1), cfg.data_seed ^ VALIDATION_SALT)
    }

    fn draw(cfg: &DataConfig, n: usize, seed: u64) -> Result<Self> {
        let specs: Vec<SceneSpec> = SceneSpec::all()
            .into_iter()
            .filter(|s| cfg.backgrounds.contains(&s.background) && fits(s, cfg.frames, cfg.height, cfg.width))
            .collect();
        if specs.is_empty() {
            return Err(Error::Config("no scene fits the requested clip geometry".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clips = (0..n)
            .map(|_| (specs[rng.gen_range(0..specs.len())], rng.gen::<u64>()))
            .collect();
        Ok(Self {
            clips,
            frames: cfg.frames,
            height: cfg.height,
            width: cfg.width,
        })
    }

    /// Corpus holding exactly the given clips.
    pub fn from_clips(clips: Vec<(SceneSpec, u64)>, frames: usize, height: usize, width: usize) -> Self {
        Self {
            clips,
            frames,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn video(&self, i: usize) -> Result<Video> {
        let (spec, seed) = self.clips[i];
        synth_video(&spec, self.frames, self.height, self.width, seed)
    }

    /// `[B, L, 48, h, w]` model-space latents and captions of clips `idx`.
    pub fn clip_batch(&self, idx: &[usize]) -> Result<(Tensor<f32>, Vec<Caption>)> {
        let mut lat = Vec::with_capacity(idx.len());
        let mut caps = Vec::with_capacity(idx.len());
        for &i in idx {
            let v = self.video(i)?;
            lat.push(to_model_space(&encode_latent(&v.pixels)?));
            caps.push(v.caption);
        }
        let parts: Vec<Tensor<f32>> = lat
            .iter()
            .map(|t| {
                let mut s = vec![1];
                s.extend_from_slice(t.shape());
                t.reshape(&s)
            })
            .collect::<Result<_>>()?;
        Ok((Tensor::concat(&parts, 0)?, caps))
    }

    /// `[B, 48, h, w]` single frames: frame `f` of clip `i` for each pair.
    pub fn frame_batch(&self, picks: &[(usize, usize)]) -> Result<(Tensor<f32>, Vec<Caption>)> {
        let mut parts = Vec::with_capacity(picks.len());
        let mut caps = Vec::with_capacity(picks.len());
        for &(i, f) in picks {
            let v = self.video(i)?;
            let frame = v.pixels.narrow(0, f, 1)?;
            parts.push(to_model_space(&encode_latent(&frame)?));
            caps.push(v.caption);
        }
        Ok((Tensor::concat(&parts, 0)?, caps))
    }
}
