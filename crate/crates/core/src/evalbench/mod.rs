//! Metrics over generated clips and the attention cost benchmark.

mod bench;
mod features;
mod frechet;
mod report;

pub use bench::{bench_attention, BenchRow};
pub use features::{cosine, frame_consistency, mean_pairwise_cosine, text_video_similarity, FrameHead, VideoFeatureExtractor};
pub use frechet::{frechet_distance, FeatureSet};
pub use report::Report;
