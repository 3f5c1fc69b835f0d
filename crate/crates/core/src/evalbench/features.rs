use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::denoiser::Denoiser;
use crate::error::{dim_err, Error, Result};
use crate::nn::{Conv2d, Linear};
use crate::numerics::{Scalar, Tensor};
use crate::params::ParamBuilder;
use crate::toyworld::{encode_latent, Caption};

/// Per-frame image features and caption features living in one space.
/// Trained contrastively alongside the base denoiser, frozen afterwards.
#[derive(Clone)]
pub struct FrameHead<S: Scalar = f32> {
    conv: Conv2d<S>,
    proj: Linear<S>,
    text_proj: Linear<S>,
}

impl<S: Scalar> FrameHead<S> {
    pub fn new(pb: &ParamBuilder<S>, latent_channels: usize, hidden: usize, text_dim: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(&pb.pp("conv"), latent_channels, hidden, 3, 1)?,
            proj: Linear::new(&pb.pp("proj"), hidden, text_dim, true)?,
            text_proj: Linear::new(&pb.pp("text_proj"), text_dim, text_dim, true)?,
        })
    }

    /// `[F, C, H, W]` latent frames to `[F, e]`.
    pub fn frame_features(&self, latents: &Tensor<S>) -> Result<Tensor<S>> {
        let h = self.conv.forward(latents)?.silu();
        let (f, c, hh, ww) = (h.dim(0), h.dim(1), h.dim(2), h.dim(3));
        let pooled = h.reshape(&[f, c, hh * ww])?.sum_axis(2)?.scale(1.0 / (hh * ww) as f64);
        self.proj.forward(&pooled)
    }

    /// `[B, K, e]` token embeddings to `[B, e]`.
    pub fn text_features(&self, text: &Tensor<S>) -> Result<Tensor<S>> {
        let k = text.dim(1);
        self.text_proj.forward(&text.sum_axis(1)?.scale(1.0 / k as f64))
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Mean cosine over all unordered pairs; needs at least two vectors.
pub fn mean_pairwise_cosine(feats: &[Vec<f64>]) -> Result<f64> {
    if feats.len() < 2 {
        return Err(Error::Usage(format!("need at least 2 frames, got {}", feats.len())));
    }
    let mut acc = 0.0;
    let mut n = 0usize;
    for i in 0..feats.len() {
        for j in i + 1..feats.len() {
            acc += cosine(&feats[i], &feats[j]);
            n += 1;
        }
    }
    Ok(acc / n as f64)
}

fn rows(t: &Tensor<f32>) -> Vec<Vec<f64>> {
    let d = t.dim(t.rank() - 1);
    t.to_f64_vec().chunks(d).map(|c| c.to_vec()).collect()
}

fn frame_feature_rows(model: &Denoiser<f32>, pixels: &Tensor<f32>) -> Result<Vec<Vec<f64>>> {
    if pixels.rank() != 4 {
        return Err(dim_err!("expected pixels [L, 3, H, W], got {:?}", pixels.shape()));
    }
    Ok(rows(&model.head.frame_features(&encode_latent(pixels)?)?))
}

/// Mean over frames of the cosine between frame features and the caption feature.
pub fn text_video_similarity(model: &Denoiser<f32>, caption: &str, pixels: &Tensor<f32>) -> Result<f64> {
    let c = Caption::parse(caption)?;
    let text = model.head.text_features(&model.text.embed(&[&c])?)?;
    let tv = text.to_f64_vec();
    let frames = frame_feature_rows(model, pixels)?;
    Ok(frames.iter().map(|f| cosine(f, &tv)).sum::<f64>() / frames.len() as f64)
}

/// Mean pairwise cosine of frame features within one clip.
pub fn frame_consistency(model: &Denoiser<f32>, pixels: &Tensor<f32>) -> Result<f64> {
    if pixels.rank() == 4 && pixels.dim(0) < 2 {
        return Err(Error::Usage("frame_consistency needs at least 2 frames".into()));
    }
    mean_pairwise_cosine(&frame_feature_rows(model, pixels)?)
}

/// Frozen random-projection features over 4-frame pixel blocks, the
/// stand-in for a pretrained video network in the Fréchet statistic.
pub struct VideoFeatureExtractor {
    weight: Tensor<f32>,
    block: usize,
}

impl VideoFeatureExtractor {
    pub const BLOCK: usize = 4;

    /// Projection of `[4, 3, h, w]` blocks down to `dim` features.
    pub fn new(h: usize, w: usize, dim: usize, seed: u64) -> Self {
        let n_in = Self::BLOCK * 3 * h * w;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weight = Tensor::<f32>::randn(&[n_in, dim], &mut rng).scale(1.0 / (n_in as f64).sqrt());
        Self {
            weight,
            block: n_in,
        }
    }

    /// One feature vector per clip: `tanh` of the projection, averaged over
    /// non-overlapping 4-frame blocks.
    pub fn features(&self, pixels: &Tensor<f32>) -> Result<Vec<f64>> {
        let l = pixels.dim(0);
        if l < Self::BLOCK || pixels.numel() / l * Self::BLOCK != self.block {
            return Err(dim_err!("clip {:?} does not fit the extractor", pixels.shape()));
        }
        let nb = l / Self::BLOCK;
        let x = pixels.narrow(0, 0, nb * Self::BLOCK)?.affine(2.0, -1.0).reshape(&[nb, self.block])?;
        let f = x.matmul(&self.weight)?.tanh().sum_axis(0)?.scale(1.0 / nb as f64);
        Ok(f.to_f64_vec())
    }
}
