// SPDX-License-Identifier: Apache-2.0

//! Contrastive fine-tuning of adapters at a target layer.

mod loss;
mod optim;
mod schedule;
mod tli;

pub use loss::{
    contrastive_loss_tape, in_batch_contrastive_loss, ContrastiveLoss, EmbeddingBatch,
    UNIT_NORM_TOL,
};
pub use optim::{adamw_step, clip_global_norm, AdamWConfig, OptimizerState};
pub use schedule::lr_at;
pub use tli::{tli_batch_loss, train_tli, StepRecord, TliConfig, TrainingLog};
