// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::loss::contrastive_loss_tape;
use super::optim::{adamw_step, clip_global_norm, AdamWConfig, OptimizerState};
use super::schedule::lr_at;
use crate::error::{Error, Result};
use crate::lora::{LoraHook, LoraModel};
use crate::model::{Encoding, ModelVars, Vocabulary};
use crate::numcore::{Rng, Tape, Var};
use crate::synth::WordPairSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TliConfig {
    /// Hidden-state index whose pooled embeddings feed the loss.
    pub target_layer: usize,
    pub margin: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub adamw: AdamWConfig,
    pub seed: u64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TliConfig {
    fn default() -> Self {
        Self {
            target_layer: 2,
            margin: 0.4,
            lr: 2e-4,
            epochs: 5,
            batch_size: 8,
            warmup_steps: 50,
            adamw: AdamWConfig::default(),
            seed: 42,
            clip_norm: Some(1.0),
        }
    }
}

impl TliConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) {
            return Err(Error::Config(format!(
                "margin must be non-negative, got {}",
                self.margin
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "batch_size and epochs must be positive".into(),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.lr)));
        }
        Ok(())
    }

    pub fn total_steps(&self, n_pairs: usize) -> usize {
        self.epochs * n_pairs.div_ceil(self.batch_size)
    }
}

/// One optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    /// Global adapter gradient norm before clipping.
    pub grad_norm: f64,
    /// Per-adapter gradient norm before clipping, keyed by adapter name.
    pub adapter_grad_norms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub steps: Vec<StepRecord>,
}

impl TrainingLog {
    /// Mean loss of each epoch, in order.
    pub fn epoch_mean_losses(&self) -> Vec<f64> {
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for r in &self.steps {
            let e = sums.entry(r.epoch).or_default();
            e.0 += r.loss;
            e.1 += 1;
        }
        sums.values().map(|(s, n)| s / *n as f64).collect()
    }

    /// One JSON object per line.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.steps {
            out.push_str(&serde_json::to_string(r).map_err(|e| Error::Corrupt(e.to_string()))?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_json_lines(text: &str) -> Result<Self> {
        let steps = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Parse {
                    path: "<training log>".into(),
                    line: i as u64 + 1,
                    reason: e.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { steps })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_json_lines()?.as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// Trains the adapters of `model` so that target-layer embeddings of each
/// source word move toward its translation and away from the hardest
/// in-batch negative. Base weights never change.
///
/// Each epoch visits `pairs` in a seeded shuffle; the last batch may be
/// short. Every word is run as its own sequence.
pub fn train_tli(
    model: &LoraModel,
    vocab: &Vocabulary,
    pairs: &WordPairSet,
    cfg: &TliConfig,
) -> Result<(LoraModel, TrainingLog)> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Config("no training pairs".into()));
    }
    let final_layer = model.base.config.final_layer();
    if cfg.target_layer > final_layer {
        return Err(Error::Config(format!(
            "target layer {} out of range 0..={final_layer}",
            cfg.target_layer
        )));
    }
    let encoded: Vec<(Encoding, Encoding)> = pairs
        .pairs()
        .iter()
        .map(|p| {
            let wrap = |inner| Error::Pair {
                source_word: p.source.clone(),
                target_word: p.target.clone(),
                inner: Box::new(inner),
            };
            Ok((
                vocab.tokenize(&p.source).map_err(wrap)?,
                vocab.tokenize(&p.target).map_err(wrap)?,
            ))
        })
        .collect::<Result<_>>()?;

    let total = cfg.total_steps(pairs.len());
    let mut model = model.clone();
    let mut state = OptimizerState::new();
    let mut order_rng = Rng::derive(cfg.seed, 0x7A1_0001);
    let mut dropout_rng = Rng::derive(cfg.seed, 0x7A1_0002);
    let names: Vec<String> = model.adapters.iter().map(|a| a.name()).collect();
    let mut log = TrainingLog::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..encoded.len()).collect();
        order_rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let (vars, bound) = model.bind(&mut tape);
            let (loss, loss_value) = {
                let mut hook = LoraHook::training(
                    &model.adapters,
                    &bound,
                    model.config.dropout_p,
                    &mut dropout_rng,
                );
                let batch: Vec<_> = chunk.iter().map(|&i| &encoded[i]).collect();
                let loss = record_batch_loss(
                    &mut tape,
                    &model,
                    &vars,
                    &mut hook,
                    &batch,
                    cfg.target_layer,
                    cfg.margin,
                )?;
                (loss, tape.value(loss).item()?)
            };
            if !loss_value.is_finite() {
                return Err(Error::NonFinite(format!("loss at step {step}")));
            }
            tape.backward(loss)?;
            let mut grads = collect_grads(&tape, &bound);
            let adapter_grad_norms = names
                .iter()
                .zip(grads.chunks(2))
                .map(|(n, g)| {
                    (
                        n.clone(),
                        g.iter().flatten().map(|x| x * x).sum::<f64>().sqrt(),
                    )
                })
                .collect();
            let grad_norm = match cfg.clip_norm {
                Some(max) => clip_global_norm(&mut grads, max),
                None => grads.iter().flatten().map(|x| x * x).sum::<f64>().sqrt(),
            };
            let lr = lr_at(step, cfg.lr, cfg.warmup_steps, total)?;
            let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            adamw_step(
                &mut model.parameters_mut(),
                &grad_refs,
                &mut state,
                lr,
                &cfg.adamw,
            )?;
            log.steps.push(StepRecord {
                step,
                epoch,
                loss: loss_value,
                lr,
                grad_norm,
                adapter_grad_norms,
            });
            step += 1;
        }
    }
    Ok((model, log))
}

fn record_batch_loss(
    tape: &mut Tape,
    model: &LoraModel,
    vars: &ModelVars,
    hook: &mut LoraHook<'_>,
    batch: &[&(Encoding, Encoding)],
    layer: usize,
    margin: f64,
) -> Result<Var> {
    let mut anchors = Vec::with_capacity(batch.len());
    let mut positives = Vec::with_capacity(batch.len());
    for (src, tgt) in batch {
        anchors.push(model.base.embed_tape(tape, vars, src, layer, hook)?);
        positives.push(model.base.embed_tape(tape, vars, tgt, layer, hook)?);
    }
    let a = tape.stack(&anchors)?;
    let p = tape.stack(&positives)?;
    Ok(contrastive_loss_tape(tape, a, p, margin)?.0)
}

/// Loss of one batch with dropout off, and its gradient with respect to
/// every adapter tensor in [`LoraModel::parameters_mut`] order.
pub fn tli_batch_loss(
    model: &LoraModel,
    vocab: &Vocabulary,
    pairs: &WordPairSet,
    layer: usize,
    margin: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let encoded: Vec<(Encoding, Encoding)> = pairs
        .pairs()
        .iter()
        .map(|p| Ok((vocab.tokenize(&p.source)?, vocab.tokenize(&p.target)?)))
        .collect::<Result<_>>()?;
    let batch: Vec<_> = encoded.iter().collect();
    let mut tape = Tape::new();
    let (vars, bound) = model.bind(&mut tape);
    let mut rng = Rng::new(0);
    let loss = {
        let mut hook = LoraHook::training(&model.adapters, &bound, 0.0, &mut rng);
        record_batch_loss(&mut tape, model, &vars, &mut hook, &batch, layer, margin)?
    };
    let value = tape.value(loss).item()?;
    tape.backward(loss)?;
    Ok((value, collect_grads(&tape, &bound)))
}

fn collect_grads(tape: &Tape, bound: &[(Var, Var)]) -> Vec<Vec<f64>> {
    bound
        .iter()
        .flat_map(|&(a, b)| [a, b])
        .map(|v| tape.grad(v).expect("adapter gradient").to_vec())
        .collect()
}
