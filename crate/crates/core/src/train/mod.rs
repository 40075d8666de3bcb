//! Optimization: Adam, schedules, the training loop and encoder pretraining.

mod manifest;
mod optim;
mod schedule;
mod trainer;

pub use manifest::{EpochRecord, RunManifest};
pub use optim::{clip_grad_norm, grad_norm, Adam, AdamConfig};
pub use schedule::Schedule;
pub use trainer::{
    encoder_lm_config, init_encoder_from_lm, mean_posterior_variance, pretrain_lm_then_init_encoder, train, Objective, TrainConfig,
    TrainData, TrainOutcome,
};
