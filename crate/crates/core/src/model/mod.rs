// SPDX-License-Identifier: Apache-2.0

//! Micro decoder-only transformer with per-layer hidden-state probes.

pub mod checkpoint;
mod config;
mod transformer;
mod vocab;

pub use config::TransformerConfig;
pub use transformer::{
    Block, BlockVars, HiddenStates, MicroTransformer, ModelVars, NoHook, Projection,
    ProjectionHook, INIT_STD, ROPE_BASE,
};
pub use vocab::{Encoding, Vocabulary, UNK_TOKEN};
