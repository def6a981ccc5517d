// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use lexalign_core::lora::LoraConfig;
use lexalign_core::model::TransformerConfig;
use lexalign_core::probe::Tails;
use lexalign_core::synth::{PretrainConfig, WorldConfig};
use lexalign_core::trainer::{AdamWConfig, TliConfig};
use lexalign_core::viz::TsneConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Every configurable knob of the pipeline in one flat document.
///
/// The single `seed` drives world generation, model initialization,
/// pretraining, the control split, adapter initialization, TLI shuffling
/// and t-SNE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,

    // inputs for the single-stage commands
    pub pairs_file: Option<PathBuf>,
    pub vocab_file: Option<PathBuf>,
    pub base_checkpoint: Option<PathBuf>,
    pub adapter_checkpoint: Option<PathBuf>,
    pub merged_checkpoint: Option<PathBuf>,
    pub scan_file: Option<PathBuf>,

    // world
    pub concepts: usize,
    pub sentences: usize,
    pub sentence_len: usize,
    pub zipf_exponent: f64,
    pub topic_partitions: usize,
    pub topic_groups: usize,
    pub stickiness: f64,
    pub control_fraction: f64,

    // model
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq: usize,
    pub norm_eps: f64,

    // pretraining
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    pub pretrain_batch_size: usize,
    pub pretrain_warmup_steps: usize,
    pub pretrain_weight_decay: f64,

    // adapters
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub lora_dropout: f64,
    pub lora_targets: Vec<String>,
    pub lora_layers: Option<BTreeSet<usize>>,

    // TLI
    /// Hidden-state index to align; unset means the scan peak.
    pub target_layer: Option<usize>,
    pub margin: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables it.
    pub clip_norm: f64,

    // evaluation
    pub tails: Tails,
    /// Rows per set in the per-pair listing; 0 lists every pair.
    pub table2_rows: usize,

    // projections
    pub projection_pairs: usize,
    /// Source words of the pairs to plot; overrides `projection_pairs`.
    pub projection_sources: Option<Vec<String>>,
    pub tsne_perplexity: f64,
    pub tsne_iterations: usize,
    pub tsne_learning_rate: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let world = WorldConfig::default();
        let model = TransformerConfig::default();
        let pre = PretrainConfig::default();
        let lora = LoraConfig::default();
        let tli = TliConfig::default();
        let tsne = TsneConfig::default();
        Self {
            seed: 42,
            out_dir: PathBuf::from("runs"),
            pairs_file: None,
            vocab_file: None,
            base_checkpoint: None,
            adapter_checkpoint: None,
            merged_checkpoint: None,
            scan_file: None,
            concepts: world.concepts,
            sentences: world.sentences,
            sentence_len: world.sentence_len,
            zipf_exponent: world.zipf_exponent,
            topic_partitions: world.topic_partitions,
            topic_groups: world.topic_groups,
            stickiness: world.stickiness,
            control_fraction: 0.2,
            vocab_size: model.vocab_size,
            d_model: model.d_model,
            n_layers: model.n_layers,
            n_heads: model.n_heads,
            d_ff: model.d_ff,
            max_seq: model.max_seq,
            norm_eps: model.norm_eps,
            pretrain_steps: pre.steps,
            pretrain_lr: pre.lr,
            pretrain_batch_size: pre.batch_size,
            pretrain_warmup_steps: pre.warmup_steps,
            pretrain_weight_decay: pre.weight_decay,
            lora_rank: lora.rank,
            lora_alpha: lora.alpha,
            lora_dropout: lora.dropout_p,
            lora_targets: lora.target_names,
            lora_layers: None,
            target_layer: None,
            margin: tli.margin,
            // The toy model needs a larger step budget than a pretrained
            // LLM to move at all.
            lr: 2e-3,
            epochs: 20,
            batch_size: tli.batch_size,
            warmup_steps: tli.warmup_steps,
            weight_decay: tli.adamw.weight_decay,
            beta1: tli.adamw.beta1,
            beta2: tli.adamw.beta2,
            adam_eps: tli.adamw.eps,
            clip_norm: tli.clip_norm.unwrap_or(0.0),
            tails: Tails::Two,
            table2_rows: 0,
            projection_pairs: 30,
            projection_sources: None,
            tsne_perplexity: tsne.perplexity,
            tsne_iterations: tsne.iterations,
            tsne_learning_rate: tsne.learning_rate,
        }
    }
}

impl RunConfig {
    /// Reads `path` (if any), applies `key=value` overrides, and validates
    /// the result. Override values are parsed as TOML and fall back to
    /// plain strings.
    pub fn resolve(path: Option<&Path>, overrides: &[(String, String)]) -> CliResult<Self> {
        let mut table = match path {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| CliError::Io(p.to_path_buf(), e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for (key, raw) in overrides {
            let value = format!("v = {raw}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.clone()));
            table.insert(key.clone(), value);
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.world().validate()?;
        self.model().validate()?;
        self.lora().validate()?;
        if !(self.control_fraction > 0.0 && self.control_fraction < 1.0) {
            return Err(CliError::Config(format!(
                "control_fraction must lie strictly between 0 and 1, got {}",
                self.control_fraction
            )));
        }
        if self.clip_norm < 0.0 {
            return Err(CliError::Config(format!(
                "clip_norm must be non-negative, got {}",
                self.clip_norm
            )));
        }
        if self.projection_pairs < 2
            || self
                .projection_sources
                .as_ref()
                .is_some_and(|s| s.len() < 2)
        {
            return Err(CliError::Config(
                "projection_pairs must be at least 2".into(),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn world(&self) -> WorldConfig {
        WorldConfig {
            concepts: self.concepts,
            sentences: self.sentences,
            sentence_len: self.sentence_len,
            seed: self.seed,
            zipf_exponent: self.zipf_exponent,
            topic_partitions: self.topic_partitions,
            topic_groups: self.topic_groups,
            stickiness: self.stickiness,
        }
    }

    pub fn model(&self) -> TransformerConfig {
        TransformerConfig {
            vocab_size: self.vocab_size,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            max_seq: self.max_seq,
            norm_eps: self.norm_eps,
        }
    }

    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            steps: self.pretrain_steps,
            lr: self.pretrain_lr,
            batch_size: self.pretrain_batch_size,
            warmup_steps: self.pretrain_warmup_steps,
            weight_decay: self.pretrain_weight_decay,
            seed: self.seed,
        }
    }

    pub fn lora(&self) -> LoraConfig {
        LoraConfig {
            rank: self.lora_rank,
            alpha: self.lora_alpha,
            dropout_p: self.lora_dropout,
            target_names: self.lora_targets.clone(),
            target_layers: self.lora_layers.clone(),
        }
    }

    pub fn tli(&self, target_layer: usize) -> TliConfig {
        TliConfig {
            target_layer,
            margin: self.margin,
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            warmup_steps: self.warmup_steps,
            adamw: AdamWConfig {
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
                weight_decay: self.weight_decay,
            },
            seed: self.seed,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
        }
    }

    pub fn tsne(&self) -> TsneConfig {
        TsneConfig {
            perplexity: self.tsne_perplexity,
            iterations: self.tsne_iterations,
            learning_rate: self.tsne_learning_rate,
            seed: self.seed,
            ..TsneConfig::default()
        }
    }
}
