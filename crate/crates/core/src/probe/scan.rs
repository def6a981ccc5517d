// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::stats::{mean, sample_std};
use crate::error::{Error, Result};
use crate::lora::LoraModel;
use crate::model::{MicroTransformer, Vocabulary};
use crate::numcore::{cosine_similarity, Tensor};
use crate::synth::{WordPair, WordPairSet};

/// Anything that maps a word to its pooled, unit-norm embedding at every
/// hidden-state index.
pub trait Embedder {
    fn n_states(&self) -> usize;
    fn embed_layers(&self, vocab: &Vocabulary, word: &str) -> Result<Vec<Tensor>>;
}

impl Embedder for MicroTransformer {
    fn n_states(&self) -> usize {
        self.config.n_states()
    }

    fn embed_layers(&self, vocab: &Vocabulary, word: &str) -> Result<Vec<Tensor>> {
        self.embed_word_layers(vocab, word)
    }
}

impl Embedder for LoraModel {
    fn n_states(&self) -> usize {
        self.base.config.n_states()
    }

    fn embed_layers(&self, vocab: &Vocabulary, word: &str) -> Result<Vec<Tensor>> {
        self.embed_word_layers(vocab, word)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerScanResult {
    pub per_layer_mean_sim: Vec<f64>,
    pub per_layer_std: Vec<f64>,
    /// First index of the largest mean.
    pub peak_layer: usize,
    pub pair_count: usize,
}

/// Per-layer similarity of one pair. Words outside the vocabulary are
/// rejected rather than silently embedded as the unknown token.
fn pair_layers<E: Embedder + ?Sized>(
    model: &E,
    vocab: &Vocabulary,
    pair: &WordPair,
) -> Result<Vec<f64>> {
    let run = || -> Result<Vec<f64>> {
        for w in [&pair.source, &pair.target] {
            if vocab.tokenize(w)?.has_unknown() {
                return Err(Error::Contract(format!(
                    "{w:?} contains words outside the vocabulary"
                )));
            }
        }
        let a = model.embed_layers(vocab, &pair.source)?;
        let b = model.embed_layers(vocab, &pair.target)?;
        a.iter()
            .zip(&b)
            .map(|(x, y)| cosine_similarity(x.data(), y.data()))
            .collect()
    };
    run().map_err(|inner| Error::Pair {
        source_word: pair.source.clone(),
        target_word: pair.target.clone(),
        inner: Box::new(inner),
    })
}

/// Mean and sample standard deviation of pair cosine similarity at every
/// hidden-state index.
pub fn scan_layers<E: Embedder + ?Sized>(
    model: &E,
    vocab: &Vocabulary,
    pairs: &WordPairSet,
) -> Result<LayerScanResult> {
    if pairs.is_empty() {
        return Err(Error::Contract("layer scan needs at least one pair".into()));
    }
    let n_states = model.n_states();
    let mut per_layer: Vec<Vec<f64>> = vec![Vec::with_capacity(pairs.len()); n_states];
    for pair in pairs.pairs() {
        for (layer, s) in pair_layers(model, vocab, pair)?.into_iter().enumerate() {
            per_layer[layer].push(s);
        }
    }
    let per_layer_mean_sim: Vec<f64> = per_layer.iter().map(|v| mean(v)).collect();
    let per_layer_std = per_layer.iter().map(|v| sample_std(v)).collect();
    let peak_layer = per_layer_mean_sim
        .iter()
        .enumerate()
        .fold(0, |best, (i, &m)| {
            if m > per_layer_mean_sim[best] {
                i
            } else {
                best
            }
        });
    Ok(LayerScanResult {
        per_layer_mean_sim,
        per_layer_std,
        peak_layer,
        pair_count: pairs.len(),
    })
}

/// Pair similarities at one layer, in pair order.
pub fn evaluate_alignment<E: Embedder + ?Sized>(
    model: &E,
    vocab: &Vocabulary,
    pairs: &WordPairSet,
    layer: usize,
) -> Result<Vec<f64>> {
    if layer >= model.n_states() {
        return Err(Error::Contract(format!(
            "layer {layer} out of range 0..{}",
            model.n_states()
        )));
    }
    pairs
        .pairs()
        .iter()
        .map(|p| pair_layers(model, vocab, p).map(|sims| sims[layer]))
        .collect()
}
