// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::world::SyntheticWorld;
use crate::error::{Error, Result};
use crate::model::{MicroTransformer, NoHook, Vocabulary};
use crate::numcore::{Rng, Tape};
use crate::trainer::{adamw_step, clip_global_norm, lr_at, AdamWConfig, OptimizerState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 3e-3,
            batch_size: 16,
            warmup_steps: 100,
            weight_decay: 0.01,
            seed: 42,
        }
    }
}

/// Per-step mean next-token cross-entropy.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PretrainLog {
    pub losses: Vec<f64>,
}

/// Next-token cross-entropy training of every weight on the world corpus,
/// with AdamW, warmup-then-linear-decay and global-norm clipping at 1.0.
/// Batches are sentences drawn uniformly with replacement.
pub fn pretrain_toy(
    model: &MicroTransformer,
    vocab: &Vocabulary,
    world: &SyntheticWorld,
    cfg: &PretrainConfig,
) -> Result<(MicroTransformer, PretrainLog)> {
    let mut model = model.clone();
    if cfg.steps == 0 {
        return Ok((model, PretrainLog::default()));
    }
    if vocab.len() > model.config.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary of {} tokens exceeds model vocab_size {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let corpus = world.token_ids(vocab)?;
    let seq_len = world.config.sentence_len - 1;
    if seq_len > model.config.max_seq {
        return Err(Error::SequenceTooLong {
            len: seq_len,
            max: model.config.max_seq,
        });
    }
    let warmup = cfg.warmup_steps.min(cfg.steps - 1);
    let opt = AdamWConfig {
        weight_decay: cfg.weight_decay,
        ..Default::default()
    };
    let mut state = OptimizerState::new();
    let mut rng = Rng::derive(cfg.seed, 0x9E7_0001);
    let mut log = PretrainLog::default();
    for step in 0..cfg.steps {
        let mut inputs = Vec::with_capacity(cfg.batch_size * seq_len);
        let mut targets = Vec::with_capacity(cfg.batch_size * seq_len);
        for _ in 0..cfg.batch_size {
            let s = &corpus[rng.below(corpus.len())];
            inputs.extend_from_slice(&s[..seq_len]);
            targets.extend_from_slice(&s[1..=seq_len]);
        }
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, true);
        let states = model.forward_tape(
            &mut tape,
            &vars,
            &inputs,
            seq_len,
            &mut NoHook,
            model.config.final_layer(),
        )?;
        let logits = model.logits(&mut tape, &vars, *states.last().unwrap())?;
        let loss = tape.cross_entropy(logits, &targets)?;
        let loss_value = tape.value(loss).item()?;
        if !loss_value.is_finite() {
            return Err(Error::NonFinite(format!("pretraining loss at step {step}")));
        }
        tape.backward(loss)?;
        let mut grads: Vec<Vec<f64>> = vars
            .all()
            .into_iter()
            .map(|v| tape.grad(v).expect("parameter gradient").to_vec())
            .collect();
        clip_global_norm(&mut grads, 1.0);
        let lr = lr_at(step, cfg.lr, warmup, cfg.steps)?;
        let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        let mut params: Vec<&mut crate::numcore::Tensor> = model
            .named_tensors_mut()
            .into_iter()
            .map(|(_, t)| t)
            .collect();
        adamw_step(&mut params, &grad_refs, &mut state, lr, &opt)?;
        log.losses.push(loss_value);
    }
    Ok((model, log))
}
