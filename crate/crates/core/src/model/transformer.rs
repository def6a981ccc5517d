// SPDX-License-Identifier: Apache-2.0

use std::fmt;

use super::config::TransformerConfig;
use super::vocab::{Encoding, Vocabulary};
use crate::error::{Error, Result};
use crate::numcore::{Rng, Tape, Tensor, Var};

/// Standard deviation of freshly initialized weight matrices.
pub const INIT_STD: f64 = 0.02;

/// Rotary embedding base frequency.
pub const ROPE_BASE: f64 = 10_000.0;

/// Attention projections that adapters can target by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Projection {
    Q,
    K,
    V,
    O,
}

impl Projection {
    pub const ALL: [Projection; 4] = [Projection::Q, Projection::K, Projection::V, Projection::O];

    pub fn name(self) -> &'static str {
        match self {
            Projection::Q => "q_proj",
            Projection::K => "k_proj",
            Projection::V => "v_proj",
            Projection::O => "o_proj",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::UnknownProjection {
                name: name.to_string(),
                valid: Self::ALL.iter().map(|p| p.name()).collect(),
            })
    }
}

impl fmt::Display for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One pre-norm decoder block. Linear weights are stored out×in.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub attn_norm: Tensor,
    pub q_proj: Tensor,
    pub k_proj: Tensor,
    pub v_proj: Tensor,
    pub o_proj: Tensor,
    pub ffn_norm: Tensor,
    pub gate_proj: Tensor,
    pub up_proj: Tensor,
    pub down_proj: Tensor,
}

impl Block {
    fn random(cfg: &TransformerConfig, rng: &mut Rng) -> Self {
        let (d, f) = (cfg.d_model, cfg.d_ff);
        Self {
            attn_norm: Tensor::full(&[d], 1.0),
            q_proj: Tensor::randn(&[d, d], INIT_STD, rng),
            k_proj: Tensor::randn(&[d, d], INIT_STD, rng),
            v_proj: Tensor::randn(&[d, d], INIT_STD, rng),
            o_proj: Tensor::randn(&[d, d], INIT_STD, rng),
            ffn_norm: Tensor::full(&[d], 1.0),
            gate_proj: Tensor::randn(&[f, d], INIT_STD, rng),
            up_proj: Tensor::randn(&[f, d], INIT_STD, rng),
            down_proj: Tensor::randn(&[d, f], INIT_STD, rng),
        }
    }

    pub fn projection(&self, p: Projection) -> &Tensor {
        match p {
            Projection::Q => &self.q_proj,
            Projection::K => &self.k_proj,
            Projection::V => &self.v_proj,
            Projection::O => &self.o_proj,
        }
    }

    pub fn projection_mut(&mut self, p: Projection) -> &mut Tensor {
        match p {
            Projection::Q => &mut self.q_proj,
            Projection::K => &mut self.k_proj,
            Projection::V => &mut self.v_proj,
            Projection::O => &mut self.o_proj,
        }
    }

    fn named(&self) -> [(&'static str, &Tensor); 9] {
        [
            ("attn_norm", &self.attn_norm),
            ("q_proj", &self.q_proj),
            ("k_proj", &self.k_proj),
            ("v_proj", &self.v_proj),
            ("o_proj", &self.o_proj),
            ("ffn_norm", &self.ffn_norm),
            ("gate_proj", &self.gate_proj),
            ("up_proj", &self.up_proj),
            ("down_proj", &self.down_proj),
        ]
    }

    fn named_mut(&mut self) -> [(&'static str, &mut Tensor); 9] {
        [
            ("attn_norm", &mut self.attn_norm),
            ("q_proj", &mut self.q_proj),
            ("k_proj", &mut self.k_proj),
            ("v_proj", &mut self.v_proj),
            ("o_proj", &mut self.o_proj),
            ("ffn_norm", &mut self.ffn_norm),
            ("gate_proj", &mut self.gate_proj),
            ("up_proj", &mut self.up_proj),
            ("down_proj", &mut self.down_proj),
        ]
    }
}

/// Decoder-only transformer with untied input and output embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroTransformer {
    pub config: TransformerConfig,
    pub token_embedding: Tensor,
    pub blocks: Vec<Block>,
    pub final_norm: Tensor,
    pub lm_head: Tensor,
}

/// Hidden states of one sequence: index 0 is the embedding lookup, index
/// `k` in `1..=n_layers` the residual stream after block `k`, and the last
/// entry the final-norm output.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    pub per_layer: Vec<Tensor>,
    pub attention_mask: Vec<bool>,
}

/// Additive contribution to a projection output, e.g. a low-rank adapter.
pub trait ProjectionHook {
    /// Returns the term added to `x · Wᵀ` for projection `proj` of block
    /// `layer` (0-based), or `None` to leave it untouched.
    fn delta(
        &mut self,
        tape: &mut Tape,
        layer: usize,
        proj: Projection,
        x: Var,
    ) -> Result<Option<Var>>;
}

/// Hook that never adds anything.
pub struct NoHook;

impl ProjectionHook for NoHook {
    fn delta(&mut self, _: &mut Tape, _: usize, _: Projection, _: Var) -> Result<Option<Var>> {
        Ok(None)
    }
}

/// Tape handles for one block's weights.
#[derive(Debug, Clone)]
pub struct BlockVars {
    pub attn_norm: Var,
    pub q_proj: Var,
    pub k_proj: Var,
    pub v_proj: Var,
    pub o_proj: Var,
    pub ffn_norm: Var,
    pub gate_proj: Var,
    pub up_proj: Var,
    pub down_proj: Var,
}

impl BlockVars {
    pub fn all(&self) -> [Var; 9] {
        [
            self.attn_norm,
            self.q_proj,
            self.k_proj,
            self.v_proj,
            self.o_proj,
            self.ffn_norm,
            self.gate_proj,
            self.up_proj,
            self.down_proj,
        ]
    }
}

/// Tape handles for every model weight, in [`MicroTransformer::named_tensors`] order.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub token_embedding: Var,
    pub blocks: Vec<BlockVars>,
    pub final_norm: Var,
    pub lm_head: Var,
}

impl ModelVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v = vec![self.token_embedding];
        for b in &self.blocks {
            v.extend(b.all());
        }
        v.push(self.final_norm);
        v.push(self.lm_head);
        v
    }
}

impl MicroTransformer {
    pub fn new(config: TransformerConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (v, d) = (config.vocab_size, config.d_model);
        let token_embedding = Tensor::randn(&[v, d], INIT_STD, rng);
        let blocks = (0..config.n_layers)
            .map(|_| Block::random(&config, rng))
            .collect();
        let lm_head = Tensor::randn(&[v, d], INIT_STD, rng);
        Ok(Self {
            final_norm: Tensor::full(&[d], 1.0),
            config,
            token_embedding,
            blocks,
            lm_head,
        })
    }

    /// Every weight with its checkpoint name, in storage order: token
    /// embedding, then per block `layers.{i}.{attn_norm, q_proj, k_proj,
    /// v_proj, o_proj, ffn_norm, gate_proj, up_proj, down_proj}`, then the
    /// final norm and the output head.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("token_embedding".to_string(), &self.token_embedding)];
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(
                b.named()
                    .into_iter()
                    .map(|(n, t)| (format!("layers.{i}.{n}"), t)),
            );
        }
        out.push(("final_norm".to_string(), &self.final_norm));
        out.push(("lm_head".to_string(), &self.lm_head));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![("token_embedding".to_string(), &mut self.token_embedding)];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(
                b.named_mut()
                    .into_iter()
                    .map(|(n, t)| (format!("layers.{i}.{n}"), t)),
            );
        }
        out.push(("final_norm".to_string(), &mut self.final_norm));
        out.push(("lm_head".to_string(), &mut self.lm_head));
        out
    }

    /// Expected `(name, shape)` list for a config, in storage order.
    pub fn expected_layout(cfg: &TransformerConfig) -> Vec<(String, Vec<usize>)> {
        let (v, d, f) = (cfg.vocab_size, cfg.d_model, cfg.d_ff);
        let mut out = vec![("token_embedding".to_string(), vec![v, d])];
        for i in 0..cfg.n_layers {
            let shapes: [(&str, Vec<usize>); 9] = [
                ("attn_norm", vec![d]),
                ("q_proj", vec![d, d]),
                ("k_proj", vec![d, d]),
                ("v_proj", vec![d, d]),
                ("o_proj", vec![d, d]),
                ("ffn_norm", vec![d]),
                ("gate_proj", vec![f, d]),
                ("up_proj", vec![f, d]),
                ("down_proj", vec![d, f]),
            ];
            out.extend(
                shapes
                    .into_iter()
                    .map(|(n, s)| (format!("layers.{i}.{n}"), s)),
            );
        }
        out.push(("final_norm".to_string(), vec![d]));
        out.push(("lm_head".to_string(), vec![v, d]));
        out
    }

    /// Rebuilds a model from tensors in storage order.
    pub fn from_tensors(config: TransformerConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = Self::expected_layout(&config);
        if tensors.len() != layout.len() {
            return Err(Error::Checkpoint {
                field: "tensors".into(),
                reason: format!("expected {} tensors, found {}", layout.len(), tensors.len()),
            });
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint {
                    field: name.clone(),
                    reason: format!(
                        "shape {:?} does not match config shape {:?}",
                        t.shape(),
                        shape
                    ),
                });
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        let token_embedding = next();
        let blocks = (0..config.n_layers)
            .map(|_| Block {
                attn_norm: next(),
                q_proj: next(),
                k_proj: next(),
                v_proj: next(),
                o_proj: next(),
                ffn_norm: next(),
                gate_proj: next(),
                up_proj: next(),
                down_proj: next(),
            })
            .collect();
        let final_norm = next();
        let lm_head = next();
        Ok(Self {
            config,
            token_embedding,
            blocks,
            final_norm,
            lm_head,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Registers every weight on the tape; `trainable` decides whether they
    /// collect gradients.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ModelVars {
        let mut reg = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let token_embedding = reg(&self.token_embedding);
        let blocks = self
            .blocks
            .iter()
            .map(|b| BlockVars {
                attn_norm: reg(&b.attn_norm),
                q_proj: reg(&b.q_proj),
                k_proj: reg(&b.k_proj),
                v_proj: reg(&b.v_proj),
                o_proj: reg(&b.o_proj),
                ffn_norm: reg(&b.ffn_norm),
                gate_proj: reg(&b.gate_proj),
                up_proj: reg(&b.up_proj),
                down_proj: reg(&b.down_proj),
            })
            .collect();
        ModelVars {
            token_embedding,
            blocks,
            final_norm: reg(&self.final_norm),
            lm_head: reg(&self.lm_head),
        }
    }

    /// Records a causal forward pass over `ids.len() / seq_len` sequences of
    /// length `seq_len` stacked row-wise, returning hidden states
    /// `0..=upto` (see [`HiddenStates`] for the indexing).
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        ids: &[usize],
        seq_len: usize,
        hook: &mut dyn ProjectionHook,
        upto: usize,
    ) -> Result<Vec<Var>> {
        let cfg = &self.config;
        if seq_len > cfg.max_seq {
            return Err(Error::SequenceTooLong {
                len: seq_len,
                max: cfg.max_seq,
            });
        }
        if upto > cfg.final_layer() {
            return Err(Error::Contract(format!(
                "layer {upto} out of range 0..={}",
                cfg.final_layer()
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= cfg.vocab_size) {
            return Err(Error::Contract(format!(
                "token id {bad} out of range for vocab_size {}",
                cfg.vocab_size
            )));
        }
        let mut h = tape.gather(vars.token_embedding, ids)?;
        let mut states = vec![h];
        for (layer, bv) in vars.blocks.iter().enumerate().take(upto.min(cfg.n_layers)) {
            let a = tape.rms_norm(h, bv.attn_norm, cfg.norm_eps)?;
            let q = project(tape, hook, layer, Projection::Q, a, bv.q_proj)?;
            let k = project(tape, hook, layer, Projection::K, a, bv.k_proj)?;
            let v = project(tape, hook, layer, Projection::V, a, bv.v_proj)?;
            let q = tape.rope(q, cfg.n_heads, seq_len, ROPE_BASE)?;
            let k = tape.rope(k, cfg.n_heads, seq_len, ROPE_BASE)?;
            let att = tape.causal_attention(q, k, v, cfg.n_heads, seq_len)?;
            let o = project(tape, hook, layer, Projection::O, att, bv.o_proj)?;
            h = tape.add(h, o)?;
            let m = tape.rms_norm(h, bv.ffn_norm, cfg.norm_eps)?;
            let gate = tape.linear(m, bv.gate_proj)?;
            let gate = tape.silu(gate);
            let up = tape.linear(m, bv.up_proj)?;
            let act = tape.mul(gate, up)?;
            let down = tape.linear(act, bv.down_proj)?;
            h = tape.add(h, down)?;
            states.push(h);
        }
        if upto == cfg.final_layer() {
            let f = tape.rms_norm(h, vars.final_norm, cfg.norm_eps)?;
            states.push(f);
        }
        Ok(states)
    }

    /// Next-token logits from the final-norm state.
    pub fn logits(&self, tape: &mut Tape, vars: &ModelVars, final_state: Var) -> Result<Var> {
        tape.linear(final_state, vars.lm_head)
    }

    /// Pooled, unit-norm embedding of one encoded text at `layer`.
    pub fn embed_tape(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        enc: &Encoding,
        layer: usize,
        hook: &mut dyn ProjectionHook,
    ) -> Result<Var> {
        let states = self.forward_tape(tape, vars, &enc.ids, enc.ids.len(), hook, layer)?;
        let pooled = tape.mean_pool_masked(states[layer], &enc.mask)?;
        tape.l2_normalize(pooled)
    }

    /// Full forward pass of one sequence with every hidden state captured.
    pub fn forward_with_hidden_states(&self, ids: &[usize], mask: &[bool]) -> Result<HiddenStates> {
        self.hidden_states_with(ids, mask, &mut NoHook)
    }

    pub(crate) fn hidden_states_with(
        &self,
        ids: &[usize],
        mask: &[bool],
        hook: &mut dyn ProjectionHook,
    ) -> Result<HiddenStates> {
        if ids.is_empty() {
            return Err(Error::EmptyText);
        }
        if mask.len() != ids.len() {
            return Err(Error::shape("forward", &[ids.len()], &[mask.len()]));
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let states = self.forward_tape(
            &mut tape,
            &vars,
            ids,
            ids.len(),
            hook,
            self.config.final_layer(),
        )?;
        Ok(HiddenStates {
            per_layer: states.iter().map(|&v| tape.value(v).clone()).collect(),
            attention_mask: mask.to_vec(),
        })
    }

    /// Tokenize, run, mean-pool `layer` over the mask and L2-normalize.
    pub fn embed_word(&self, vocab: &Vocabulary, word: &str, layer: usize) -> Result<Tensor> {
        let mut all = self.embed_word_layers(vocab, word)?;
        if layer >= all.len() {
            return Err(Error::Contract(format!(
                "layer {layer} out of range 0..={}",
                self.config.final_layer()
            )));
        }
        Ok(all.swap_remove(layer))
    }

    /// [`embed_word`](Self::embed_word) at every layer from one forward pass.
    pub fn embed_word_layers(&self, vocab: &Vocabulary, word: &str) -> Result<Vec<Tensor>> {
        let enc = vocab.tokenize(word)?;
        self.embed_encoding_layers(&enc, &mut NoHook)
    }

    pub(crate) fn embed_encoding_layers(
        &self,
        enc: &Encoding,
        hook: &mut dyn ProjectionHook,
    ) -> Result<Vec<Tensor>> {
        let hs = self.hidden_states_with(&enc.ids, &enc.mask, hook)?;
        hs.per_layer
            .iter()
            .map(|s| {
                let pooled = crate::numcore::mean_pool_masked(s, &hs.attention_mask)?;
                crate::numcore::l2_normalize(&pooled)
            })
            .collect()
    }
}

fn project(
    tape: &mut Tape,
    hook: &mut dyn ProjectionHook,
    layer: usize,
    proj: Projection,
    x: Var,
    w: Var,
) -> Result<Var> {
    let base = tape.linear(x, w)?;
    match hook.delta(tape, layer, proj, x)? {
        Some(d) => tape.add(base, d),
        None => Ok(base),
    }
}
