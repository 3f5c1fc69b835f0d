//! Training, generation, editing and super-resolution workflows.

pub mod config;
pub mod data;
mod edit;
mod generate;
mod log;
mod model_io;
mod optim;
mod superres;
mod train;

pub use config::{BenchConfig, DataConfig, ModelCard, ModelKind, RunConfig, TrainConfig};
pub use data::{from_model_space, to_model_space, Corpus};
pub use edit::{masked_channel_mean, mean_abs_diff, one_shot_edit, EditOutcome};
pub use generate::{caption_batch, generate_t2v, latent_extent, latents_to_pixels, write_generation, GeneratedRecord, Guided};
pub use log::{LossLog, LossRecord};
pub use model_io::{card_path, clone_model, load_model, save_model};
pub use optim::AdamW;
pub use superres::{build_superres, conditioning_latent, downsample_box, superres_apply, superres_train, SrTask, SR_FACTOR};
pub use train::{adapt_train_t2v, pretrain_base, train_video, validation_loss, CheckpointHook, TrainOutcome};
