//! Training: PK sampling, augmentation, the combined softmax + triplet
//! objective, Adam and the warmup/step learning-rate schedule.

pub mod adam;
pub mod augment;
pub mod sampler;
pub mod schedule;
mod trainer;

pub use adam::{adam_step, Adam, AdamConfig, Moments};
pub use augment::augment;
pub use sampler::{sample_batch, SamplerConfig};
pub use schedule::{lr_at, LrSchedule};
pub use trainer::{train, EpochLog, TrainConfig, TrainSet, FROZEN_PREFIX};
