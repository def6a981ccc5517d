// SPDX-License-Identifier: Apache-2.0

//! Low-rank adapters on named attention projections.
//!
//! An adapter on projection `W` (stored out×in) adds
//! `scaling · B · A · drop(x)` to `W · x`, with `A` of shape r×in and `B` of
//! shape out×r. `B` starts at zero so a fresh adapter is an exact no-op.

mod adapter;
mod checkpoint;

pub use adapter::{adapted_forward, inject, merge, LoraAdapter, LoraConfig, LoraHook, LoraModel};
pub use checkpoint::LORA_KIND;
