use std::path::{Path, PathBuf};

use super::config::{ModelCard, ModelKind};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};

/// Sidecar holding the architecture of the checkpoint at `ckpt`.
pub fn card_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

pub fn save_model(model: &Denoiser<f32>, kind: ModelKind, path: &Path) -> Result<()> {
    save_checkpoint(model.params(), path)?;
    let card = ModelCard {
        kind,
        model: model.config().clone(),
        video: model.video_options(),
    };
    let cp = card_path(path);
    std::fs::write(&cp, card.to_text()).map_err(|e| Error::io(&cp, e))
}

pub fn load_model(path: &Path) -> Result<(ModelKind, Denoiser<f32>)> {
    let cp = card_path(path);
    let text = std::fs::read_to_string(&cp).map_err(|e| Error::io(&cp, e))?;
    let card = ModelCard::parse(&text)?;
    let params = load_checkpoint(path)?;
    let model = Denoiser::from_params(&card.model, card.video, &params)?;
    Ok((card.kind, model))
}

/// Independent copy sharing no storage with `model`.
pub fn clone_model(model: &Denoiser<f32>) -> Result<Denoiser<f32>> {
    Denoiser::from_params(model.config(), model.video_options(), model.params())
}
