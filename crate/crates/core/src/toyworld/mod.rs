//! Synthetic captioned clips, the space-to-depth latent codec and the toy
//! text embedder.

mod caption;
mod codec;
pub mod dataset;
pub mod ppm;
mod scene;
mod text;

pub use caption::{parse_caption, tokenize, Caption, Vocab, MAX_TOKENS, PAD};
pub use codec::{decode_latent, encode_latent, LATENT_CHANNELS, PATCH};
pub use scene::{object_mask, synth_video, Background, Color, Motion, SceneSpec, Shape, Video, OBJECT_SIZE};
pub use text::{embed_text, TextEncoder};
