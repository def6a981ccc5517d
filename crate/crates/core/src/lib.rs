// SPDX-License-Identifier: Apache-2.0

//! Cross-lingual lexical alignment lab.

pub mod error;
pub mod lora;
pub mod model;
pub mod numcore;
pub mod probe;
pub mod synth;
pub mod trainer;
pub mod viz;

pub use error::{Error, Result};
