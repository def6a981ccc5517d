// SPDX-License-Identifier: Apache-2.0

//! Word-pair datasets and the synthetic bilingual world used to pretrain
//! the toy base model.

mod pairs;
mod pretrain;
mod world;

pub use pairs::{split_pairs, Split, WordPair, WordPairSet};
pub use pretrain::{pretrain_toy, PretrainConfig, PretrainLog};
pub use world::{
    generate_world, zipf_probabilities, Language, Sentence, SyntheticWorld, WorldConfig,
};
