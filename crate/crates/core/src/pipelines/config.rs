//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key must be known; values
//! are validated on parse. Lists are comma-separated.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::denoiser::{DenoiserConfig, VideoOptions};
use crate::diffusion::{NoiseSchedule, SamplerConfig};
use crate::error::{Error, Result};
use crate::lsa::ShiftSpec;
use crate::toyworld::{parse_caption, Background};

/// Optimization settings shared by every training workflow.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Validation cadence in steps (0 disables).
    pub eval_every: usize,
    /// Checkpoint cadence in steps (0 disables intermediate checkpoints).
    pub ckpt_every: usize,
    /// Weight of the frame/caption contrastive term during base pre-training.
    pub contrastive_weight: f64,
    /// Probability of training with an empty caption (0 disables).
    pub cond_dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.0,
            seed: 0,
            eval_every: 0,
            ckpt_every: 0,
            contrastive_weight: 0.1,
            cond_dropout: 0.0,
        }
    }
}

/// Synthetic corpus settings.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub num_clips: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub backgrounds: Vec<Background>,
    pub data_seed: u64,
    /// Held-out clips for validation loss.
    pub val_clips: usize,
    /// Render the corpus to PPM files plus manifest under the output directory.
    pub dump_data: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            num_clips: 512,
            frames: 16,
            height: 32,
            width: 32,
            backgrounds: vec![Background::Black],
            data_seed: 1234,
            val_clips: 16,
            dump_data: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    pub tokens: usize,
    pub dim: usize,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            lengths: vec![4, 8, 16, 32],
            tokens: 64,
            dim: 32,
            repeats: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: DenoiserConfig,
    pub video: VideoOptions,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub bench: BenchConfig,
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub sampler: SamplerConfig,
    /// Classifier-free guidance scale; 1 means off.
    pub guidance_scale: f64,
    /// Upper end of the super-resolution augmentation level.
    pub sr_noise_max: f64,
    pub edit_steps: usize,
    pub edit_lr: f64,
    /// Caption of the synthetic source clip used by `edit`.
    pub edit_source: String,
    pub edit_clip_seed: u64,
    /// Number of clips generated by `eval`.
    pub eval_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: DenoiserConfig::default(),
            video: VideoOptions::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            bench: BenchConfig::default(),
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            sampler: SamplerConfig::default(),
            guidance_scale: 1.0,
            sr_noise_max: 0.3,
            edit_steps: 200,
            edit_lr: 1e-3,
            edit_source: "a red square moving right".into(),
            edit_clip_seed: 7,
            eval_samples: 8,
        }
    }
}

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "widths",
    "blocks_per_res",
    "groups",
    "heads",
    "adapter_ratio",
    "shift_window",
    "text_dim",
    "time_dim",
    "temb_dim",
    "ffn_mult",
    "feature_dim",
    "resolution",
    "model_seed",
    "temporal_adapter",
    "attn_adapter",
    "ffn_adapter",
    "lsa",
    "steps",
    "batch_size",
    "lr",
    "beta1",
    "beta2",
    "weight_decay",
    "seed",
    "eval_every",
    "ckpt_every",
    "contrastive_weight",
    "cond_dropout",
    "num_clips",
    "frames",
    "height",
    "width",
    "backgrounds",
    "data_seed",
    "val_clips",
    "dump_data",
    "bench_lengths",
    "bench_tokens",
    "bench_dim",
    "bench_repeats",
    "timesteps",
    "beta_start",
    "beta_end",
    "ddim_steps",
    "eta",
    "inversion_refine",
    "guidance_scale",
    "sr_noise_max",
    "edit_steps",
    "edit_lr",
    "edit_source",
    "edit_clip_seed",
    "eval_samples",
];

/// Splits `key = value` lines; rejects malformed lines, duplicates and unknown keys.
pub fn parse_kv(text: &str, allowed: &[&str]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !allowed.contains(&k) {
            return Err(Error::Config(format!("line {}: unknown key `{k}`", i + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", i + 1)));
        }
    }
    Ok(out)
}

fn val<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "on" => Ok(true),
        "false" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean `{v}` for `{key}`"))),
    }
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|p| val(key, p.trim())).collect()
}

fn background(key: &str, v: &str) -> Result<Background> {
    Background::ALL
        .iter()
        .copied()
        .find(|b| b.word() == v)
        .ok_or_else(|| Error::Config(format!("bad background `{v}` for `{key}`")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let kv = parse_kv(text, KEYS)?;
        let mut c = RunConfig::default();
        for (k, v) in &kv {
            c.apply(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets one key (used by the parser and by command-line overrides).
    pub fn apply(&mut self, k: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        match k {
            "widths" => m.widths = list(k, v)?,
            "blocks_per_res" => m.blocks_per_res = val(k, v)?,
            "groups" => m.groups = val(k, v)?,
            "heads" => m.heads = val(k, v)?,
            "adapter_ratio" => m.adapter_ratio = val(k, v)?,
            "shift_window" => m.shift = ShiftSpec::new(val(k, v)?)?,
            "text_dim" => m.text_dim = val(k, v)?,
            "time_dim" => m.time_dim = val(k, v)?,
            "temb_dim" => m.temb_dim = val(k, v)?,
            "ffn_mult" => m.ffn_mult = val(k, v)?,
            "feature_dim" => m.feature_dim = val(k, v)?,
            "resolution" => m.resolution = val(k, v)?,
            "model_seed" => m.seed = val(k, v)?,
            "temporal_adapter" => self.video.temporal_adapter = boolean(k, v)?,
            "attn_adapter" => self.video.attn_adapter = boolean(k, v)?,
            "ffn_adapter" => self.video.ffn_adapter = boolean(k, v)?,
            "lsa" => self.video.lsa = boolean(k, v)?,
            "steps" => self.train.steps = val(k, v)?,
            "batch_size" => self.train.batch_size = val(k, v)?,
            "lr" => self.train.lr = val(k, v)?,
            "beta1" => self.train.beta1 = val(k, v)?,
            "beta2" => self.train.beta2 = val(k, v)?,
            "weight_decay" => self.train.weight_decay = val(k, v)?,
            "seed" => self.train.seed = val(k, v)?,
            "eval_every" => self.train.eval_every = val(k, v)?,
            "ckpt_every" => self.train.ckpt_every = val(k, v)?,
            "contrastive_weight" => self.train.contrastive_weight = val(k, v)?,
            "cond_dropout" => self.train.cond_dropout = val(k, v)?,
            "num_clips" => self.data.num_clips = val(k, v)?,
            "frames" => self.data.frames = val(k, v)?,
            "height" => self.data.height = val(k, v)?,
            "width" => self.data.width = val(k, v)?,
            "backgrounds" => self.data.backgrounds = v.split(',').map(|p| background(k, p.trim())).collect::<Result<_>>()?,
            "data_seed" => self.data.data_seed = val(k, v)?,
            "val_clips" => self.data.val_clips = val(k, v)?,
            "dump_data" => self.data.dump_data = boolean(k, v)?,
            "bench_lengths" => self.bench.lengths = list(k, v)?,
            "bench_tokens" => self.bench.tokens = val(k, v)?,
            "bench_dim" => self.bench.dim = val(k, v)?,
            "bench_repeats" => self.bench.repeats = val(k, v)?,
            "timesteps" => self.timesteps = val(k, v)?,
            "beta_start" => self.beta_start = val(k, v)?,
            "beta_end" => self.beta_end = val(k, v)?,
            "ddim_steps" => self.sampler.num_inference_steps = val(k, v)?,
            "eta" => self.sampler.eta = val(k, v)?,
            "inversion_refine" => self.sampler.inversion_refine = val(k, v)?,
            "guidance_scale" => self.guidance_scale = val(k, v)?,
            "sr_noise_max" => self.sr_noise_max = val(k, v)?,
            "edit_steps" => self.edit_steps = val(k, v)?,
            "edit_lr" => self.edit_lr = val(k, v)?,
            "edit_source" => {
                parse_caption(v).map_err(|e| Error::Config(format!("`{k}`: {e}")))?;
                self.edit_source = v.to_string();
            }
            "edit_clip_seed" => self.edit_clip_seed = val(k, v)?,
            "eval_samples" => self.eval_samples = val(k, v)?,
            _ => return Err(Error::Config(format!("unknown key `{k}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        let pos = |name: &str, ok: bool| if ok { Ok(()) } else { Err(Error::Config(format!("`{name}` out of range"))) };
        pos("batch_size", t.batch_size > 0)?;
        pos("lr", t.lr > 0.0 && t.lr.is_finite())?;
        pos("beta1", (0.0..1.0).contains(&t.beta1))?;
        pos("beta2", (0.0..1.0).contains(&t.beta2))?;
        pos("weight_decay", t.weight_decay >= 0.0)?;
        pos("contrastive_weight", t.contrastive_weight >= 0.0)?;
        pos("cond_dropout", (0.0..=1.0).contains(&t.cond_dropout))?;
        pos("num_clips", self.data.num_clips > 0)?;
        pos("frames", self.data.frames > 0)?;
        pos("backgrounds", !self.data.backgrounds.is_empty())?;
        pos("height", self.data.height > 0 && self.data.height % 4 == 0)?;
        pos("width", self.data.width > 0 && self.data.width % 4 == 0)?;
        pos("eta", (0.0..=1.0).contains(&self.sampler.eta))?;
        pos("guidance_scale", self.guidance_scale >= 0.0)?;
        pos("sr_noise_max", (0.0..=1.0).contains(&self.sr_noise_max))?;
        pos("edit_lr", self.edit_lr > 0.0)?;
        pos("ddim_steps", self.sampler.num_inference_steps <= self.timesteps)?;
        self.schedule()?;
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.timesteps, self.beta_start, self.beta_end)
    }
}

/// Model description stored next to a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCard {
    pub kind: ModelKind,
    pub model: DenoiserConfig,
    pub video: Option<VideoOptions>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Image,
    Video,
    SuperRes,
}

impl ModelKind {
    fn word(self) -> &'static str {
        match self {
            ModelKind::Image => "image",
            ModelKind::Video => "video",
            ModelKind::SuperRes => "superres",
        }
    }
}

const CARD_KEYS: &[&str] = &[
    "kind",
    "latent_channels",
    "cond_channels",
    "noise_conditioning",
    "widths",
    "blocks_per_res",
    "groups",
    "heads",
    "adapter_ratio",
    "shift_window",
    "text_dim",
    "time_dim",
    "temb_dim",
    "ffn_mult",
    "feature_dim",
    "resolution",
    "model_seed",
    "temporal_adapter",
    "attn_adapter",
    "ffn_adapter",
    "lsa",
];

impl ModelCard {
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let widths: Vec<String> = m.widths.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(s, "kind = {}", self.kind.word());
        let _ = writeln!(s, "latent_channels = {}", m.latent_channels);
        let _ = writeln!(s, "cond_channels = {}", m.cond_channels);
        let _ = writeln!(s, "noise_conditioning = {}", m.noise_conditioning);
        let _ = writeln!(s, "widths = {}", widths.join(","));
        let _ = writeln!(s, "blocks_per_res = {}", m.blocks_per_res);
        let _ = writeln!(s, "groups = {}", m.groups);
        let _ = writeln!(s, "heads = {}", m.heads);
        let _ = writeln!(s, "adapter_ratio = {}", m.adapter_ratio);
        let _ = writeln!(s, "shift_window = {}", m.shift.window);
        let _ = writeln!(s, "text_dim = {}", m.text_dim);
        let _ = writeln!(s, "time_dim = {}", m.time_dim);
        let _ = writeln!(s, "temb_dim = {}", m.temb_dim);
        let _ = writeln!(s, "ffn_mult = {}", m.ffn_mult);
        let _ = writeln!(s, "feature_dim = {}", m.feature_dim);
        let _ = writeln!(s, "resolution = {}", m.resolution);
        let _ = writeln!(s, "model_seed = {}", m.seed);
        if let Some(v) = &self.video {
            let _ = writeln!(s, "temporal_adapter = {}", v.temporal_adapter);
            let _ = writeln!(s, "attn_adapter = {}", v.attn_adapter);
            let _ = writeln!(s, "ffn_adapter = {}", v.ffn_adapter);
            let _ = writeln!(s, "lsa = {}", v.lsa);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = parse_kv(text, CARD_KEYS)?;
        let kind = match kv.get("kind").map(String::as_str) {
            Some("image") => ModelKind::Image,
            Some("video") => ModelKind::Video,
            Some("superres") => ModelKind::SuperRes,
            other => return Err(Error::Config(format!("bad model kind {other:?}"))),
        };
        let mut rc = RunConfig::default();
        let mut video = VideoOptions::default();
        let mut has_video = false;
        for (k, v) in &kv {
            match k.as_str() {
                "kind" => {}
                "latent_channels" => rc.model.latent_channels = val(k, v)?,
                "cond_channels" => rc.model.cond_channels = val(k, v)?,
                "noise_conditioning" => rc.model.noise_conditioning = boolean(k, v)?,
                "temporal_adapter" | "attn_adapter" | "ffn_adapter" | "lsa" => {
                    has_video = true;
                    let b = boolean(k, v)?;
                    match k.as_str() {
                        "temporal_adapter" => video.temporal_adapter = b,
                        "attn_adapter" => video.attn_adapter = b,
                        "ffn_adapter" => video.ffn_adapter = b,
                        _ => video.lsa = b,
                    }
                }
                _ => rc.apply(k, v)?,
            }
        }
        rc.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self {
            kind,
            model: rc.model,
            video: has_video.then_some(video),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_and_duplicate_keys() {
        assert!(matches!(RunConfig::parse("stepz = 3"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("steps = 3\nsteps = 4"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("steps"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("lr = fast"), Err(Error::Config(_))));
    }

    #[test]
    fn values_and_comments() {
        let c = RunConfig::parse("# pilot\nsteps = 7\nwidths = 16, 32  # small\nlsa = false\nbackgrounds = black,white\n").unwrap();
        assert_eq!(c.train.steps, 7);
        assert_eq!(c.model.widths, vec![16, 32]);
        assert!(!c.video.lsa);
        assert_eq!(c.data.backgrounds, vec![Background::Black, Background::White]);
    }

    #[test]
    fn card_round_trip() {
        let card = ModelCard {
            kind: ModelKind::SuperRes,
            model: DenoiserConfig::default().superres(),
            video: Some(VideoOptions {
                temporal_adapter: false,
                ..Default::default()
            }),
        };
        assert_eq!(ModelCard::parse(&card.to_text()).unwrap(), card);
    }
}
