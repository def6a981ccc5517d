// SPDX-License-Identifier: Apache-2.0

//! Numeric substrate: dense tensors, the differentiation tape, and the
//! deterministic generator.

mod gradcheck;
mod rng;
mod tape;
mod tensor;
mod vecops;

pub use gradcheck::grad_check;
pub use rng::Rng;
pub use tape::{Tape, Var, DEGENERATE_EPS};
pub use tensor::{dot, matmul, matmul_nt, norm, Tensor};
pub use vecops::{cosine_similarity, l2_normalize, mean_pool_masked};

pub(crate) use tensor::gemm;
