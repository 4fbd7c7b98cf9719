//! Style-conditioned generation: fine-tuning on tagged sentences, sampling
//! from single-token seeds, and post-processing raw output.

mod batch;
mod finetune;
mod postprocess;
mod sample;

pub use batch::{
    generate_batch, seed_vocabulary, BatchReport, GeneratedSentence, GeneratedSet, GenerationPlan,
};
pub use finetune::{
    fine_tune, pretrain_base, FineTuneHyper, FineTuneMethod, StyleGenerator, TrainingReport,
};
pub use postprocess::{postprocess, Rejection};
pub use sample::{generate, GenerationConfig, RawGeneration, Seed};
