//! On-disk clip corpus: PPM frames plus a JSON-lines manifest.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ppm::write_frames;
use super::scene::{synth_video, Background, Color, Motion, SceneSpec, Shape};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.jsonl";

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub shape: Shape,
    pub color: Color,
    pub motion: Motion,
    pub speed: usize,
    pub background: Background,
    pub seed: u64,
    pub caption: String,
    /// Frame files relative to the manifest's directory.
    pub frames: Vec<String>,
}

impl ClipRecord {
    pub fn spec(&self) -> SceneSpec {
        SceneSpec {
            shape: self.shape,
            color: self.color,
            motion: self.motion,
            speed: self.speed,
            background: self.background,
        }
    }
}

/// Renders each `(spec, seed)` into `dir/clip_{k}/` and writes the manifest.
pub fn write_dataset(dir: &Path, clips: &[(SceneSpec, u64)], l: usize, h: usize, w: usize) -> Result<Vec<ClipRecord>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(clips.len());
    for (k, (spec, seed)) in clips.iter().enumerate() {
        let video = synth_video(spec, l, h, w, *seed)?;
        let sub = format!("clip_{k:05}");
        let names = write_frames(&dir.join(&sub), "frame_", &video.pixels)?;
        records.push(ClipRecord {
            shape: spec.shape,
            color: spec.color,
            motion: spec.motion,
            speed: spec.speed,
            background: spec.background,
            seed: *seed,
            caption: video.caption.text.clone(),
            frames: names.into_iter().map(|n| format!("{sub}/{n}")).collect(),
        });
    }
    write_manifest(&dir.join(MANIFEST), &records)?;
    Ok(records)
}

pub fn write_manifest(path: &Path, records: &[ClipRecord]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ClipRecord>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Corrupt {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", i + 1),
        })?;
        out.push(rec);
    }
    Ok(out)
}
