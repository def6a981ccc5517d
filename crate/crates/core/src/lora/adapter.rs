// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    Encoding, HiddenStates, MicroTransformer, ModelVars, Projection, ProjectionHook, Vocabulary,
};
use crate::numcore::{gemm, Rng, Tape, Tensor, Var};

/// Standard deviation of the `A` initialization.
pub const A_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub dropout_p: f64,
    pub target_names: Vec<String>,
    /// Block indices to adapt; `None` means every block.
    #[serde(default)]
    pub target_layers: Option<BTreeSet<usize>>,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: 16,
            alpha: 32.0,
            dropout_p: 0.05,
            target_names: vec!["q_proj".into(), "v_proj".into()],
            target_layers: None,
        }
    }
}

impl LoraConfig {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Config("lora rank must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.scaling().is_finite()) {
            return Err(Error::Config(format!(
                "lora alpha must be positive and finite, got {}",
                self.alpha
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "lora dropout must lie in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if self.target_names.is_empty() {
            return Err(Error::Config(
                "lora needs at least one target projection".into(),
            ));
        }
        Ok(())
    }

    /// Target projections, resolved and deduplicated in first-seen order.
    pub fn projections(&self) -> Result<Vec<Projection>> {
        let mut out = Vec::new();
        for name in &self.target_names {
            let p = Projection::from_name(name)?;
            if !out.contains(&p) {
                out.push(p);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub a: Tensor,
    pub b: Tensor,
    pub scaling: f64,
    pub layer: usize,
    pub projection: Projection,
}

impl LoraAdapter {
    /// `"layers.{layer}.{projection}"`.
    pub fn name(&self) -> String {
        format!("layers.{}.{}", self.layer, self.projection)
    }

    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    pub fn parameter_count(&self) -> usize {
        self.a.len() + self.b.len()
    }

    /// `scaling · B · A`, shaped like the adapted weight.
    pub fn delta_weight(&self) -> Tensor {
        let (out, r, inp) = (self.b.rows(), self.rank(), self.a.cols());
        let mut w = vec![0.0; out * inp];
        gemm(
            out,
            r,
            inp,
            self.b.data(),
            false,
            self.a.data(),
            false,
            &mut w,
            false,
        );
        w.iter_mut().for_each(|x| *x *= self.scaling);
        Tensor::new(&[out, inp], w).expect("shape from operands")
    }
}

/// A frozen base model with adapters attached.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraModel {
    pub base: MicroTransformer,
    pub config: LoraConfig,
    pub adapters: Vec<LoraAdapter>,
}

/// Attaches one adapter per (target layer, target projection), layer-major.
pub fn inject(model: &MicroTransformer, config: &LoraConfig, rng: &mut Rng) -> Result<LoraModel> {
    config.validate()?;
    let projections = config.projections()?;
    let n_layers = model.config.n_layers;
    let layers: Vec<usize> = match &config.target_layers {
        None => (0..n_layers).collect(),
        Some(set) => {
            if let Some(&bad) = set.iter().find(|&&l| l >= n_layers) {
                return Err(Error::Config(format!(
                    "target layer {bad} out of range 0..{n_layers}"
                )));
            }
            set.iter().copied().collect()
        }
    };
    let mut adapters = Vec::new();
    for &layer in &layers {
        for &projection in &projections {
            let w = model.blocks[layer].projection(projection);
            adapters.push(LoraAdapter {
                a: Tensor::randn(&[config.rank, w.cols()], A_INIT_STD, rng),
                b: Tensor::zeros(&[w.rows(), config.rank]),
                scaling: config.scaling(),
                layer,
                projection,
            });
        }
    }
    Ok(LoraModel {
        base: model.clone(),
        config: config.clone(),
        adapters,
    })
}

/// `x · Wᵀ + scaling · drop(x) · Aᵀ · Bᵀ` for rows `x` (a 1-D `x` is one
/// row). Dropout is inverted (kept entries scaled by `1/(1−p)`) and applied
/// only when `training`.
pub fn adapted_forward(
    w: &Tensor,
    adapter: &LoraAdapter,
    x: &Tensor,
    dropout_p: f64,
    training: bool,
    rng: &mut Rng,
) -> Result<Tensor> {
    let (out, inp) = (w.rows(), w.cols());
    if !w.is_matrix()
        || adapter.a.cols() != inp
        || adapter.b.rows() != out
        || adapter.b.cols() != adapter.rank()
    {
        return Err(Error::shape(
            "adapted_forward",
            w.shape(),
            adapter.a.shape(),
        ));
    }
    if x.cols() != inp {
        return Err(Error::shape("adapted_forward", x.shape(), w.shape()));
    }
    let n = x.rows();
    let mut y = vec![0.0; n * out];
    gemm(n, inp, out, x.data(), false, w.data(), true, &mut y, false);
    let dropped = if training && dropout_p > 0.0 {
        let keep = 1.0 / (1.0 - dropout_p);
        x.data()
            .iter()
            .map(|&v| {
                if rng.bernoulli(dropout_p) {
                    0.0
                } else {
                    v * keep
                }
            })
            .collect()
    } else {
        x.data().to_vec()
    };
    let r = adapter.rank();
    let mut ax = vec![0.0; n * r];
    gemm(
        n,
        inp,
        r,
        &dropped,
        false,
        adapter.a.data(),
        true,
        &mut ax,
        false,
    );
    ax.iter_mut().for_each(|v| *v *= adapter.scaling);
    gemm(n, r, out, &ax, false, adapter.b.data(), true, &mut y, true);
    let shape: Vec<usize> = if x.shape().len() == 1 {
        vec![out]
    } else {
        vec![n, out]
    };
    Tensor::new(&shape, y)
}

/// Base weights with every adapter folded in; adapters are dropped.
pub fn merge(model: &LoraModel) -> Result<MicroTransformer> {
    let mut merged = model.base.clone();
    for ad in &model.adapters {
        let w = merged.blocks[ad.layer].projection_mut(ad.projection);
        let delta = ad.delta_weight();
        if delta.shape() != w.shape() {
            return Err(Error::shape("merge", w.shape(), delta.shape()));
        }
        w.data_mut()
            .iter_mut()
            .zip(delta.data())
            .for_each(|(a, b)| *a += b);
    }
    Ok(merged)
}

/// [`ProjectionHook`] that adds adapter outputs during a forward pass.
///
/// With bound variables the adapter weights come from the tape (so they
/// collect gradients); otherwise they are registered as constants on use.
pub struct LoraHook<'a> {
    adapters: &'a [LoraAdapter],
    bound: Option<&'a [(Var, Var)]>,
    dropout: Option<(f64, &'a mut Rng)>,
}

impl<'a> LoraHook<'a> {
    /// Deterministic evaluation hook.
    pub fn eval(adapters: &'a [LoraAdapter]) -> Self {
        Self {
            adapters,
            bound: None,
            dropout: None,
        }
    }

    /// Training hook over tape-bound adapter weights, with dropout when
    /// `dropout_p > 0`.
    pub fn training(
        adapters: &'a [LoraAdapter],
        bound: &'a [(Var, Var)],
        dropout_p: f64,
        rng: &'a mut Rng,
    ) -> Self {
        Self {
            adapters,
            bound: Some(bound),
            dropout: (dropout_p > 0.0).then_some((dropout_p, rng)),
        }
    }
}

impl ProjectionHook for LoraHook<'_> {
    fn delta(
        &mut self,
        tape: &mut Tape,
        layer: usize,
        proj: Projection,
        x: Var,
    ) -> Result<Option<Var>> {
        let Some(i) = self
            .adapters
            .iter()
            .position(|a| a.layer == layer && a.projection == proj)
        else {
            return Ok(None);
        };
        let ad = &self.adapters[i];
        let (a, b) = match self.bound {
            Some(vars) => vars[i],
            None => (tape.constant(ad.a.clone()), tape.constant(ad.b.clone())),
        };
        let input = match &mut self.dropout {
            Some((p, rng)) => {
                let keep = 1.0 / (1.0 - *p);
                let shape = tape.shape(x).to_vec();
                let n: usize = shape.iter().product();
                let mask = (0..n)
                    .map(|_| if rng.bernoulli(*p) { 0.0 } else { keep })
                    .collect();
                let mask = tape.constant(Tensor::new(&shape, mask)?);
                tape.mul(x, mask)?
            }
            None => x,
        };
        let low = tape.linear(input, a)?;
        let up = tape.linear(low, b)?;
        Ok(Some(tape.scale(up, ad.scaling)))
    }
}

impl LoraModel {
    pub fn trainable_parameter_count(&self) -> usize {
        self.adapters.iter().map(LoraAdapter::parameter_count).sum()
    }

    /// Registers base weights as constants and adapter weights as
    /// parameters.
    pub fn bind(&self, tape: &mut Tape) -> (ModelVars, Vec<(Var, Var)>) {
        let vars = self.base.bind(tape, false);
        let adapters = self
            .adapters
            .iter()
            .map(|ad| (tape.param(ad.a.clone()), tape.param(ad.b.clone())))
            .collect();
        (vars, adapters)
    }

    /// Adapter weights in optimizer order: `A`, `B` per adapter.
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.adapters
            .iter_mut()
            .flat_map(|a| [&mut a.a, &mut a.b])
            .collect()
    }

    /// Evaluation-mode forward with adapters attached.
    pub fn forward_with_hidden_states(&self, ids: &[usize], mask: &[bool]) -> Result<HiddenStates> {
        self.base
            .hidden_states_with(ids, mask, &mut LoraHook::eval(&self.adapters))
    }

    pub fn embed_word_layers(&self, vocab: &Vocabulary, word: &str) -> Result<Vec<Tensor>> {
        let enc = vocab.tokenize(word)?;
        self.embed_encoding_layers(&enc)
    }

    pub fn embed_encoding_layers(&self, enc: &Encoding) -> Result<Vec<Tensor>> {
        self.base
            .embed_encoding_layers(enc, &mut LoraHook::eval(&self.adapters))
    }
}
