// SPDX-License-Identifier: Apache-2.0

//! Vector helpers on plain tensors (no tape).

use super::tape::DEGENERATE_EPS;
use super::tensor::{dot, norm, Tensor};
use crate::error::{Error, Result};

fn check_norm(v: &[f64]) -> Result<f64> {
    let n = norm(v);
    if n.is_nan() || n <= DEGENERATE_EPS {
        return Err(Error::DegenerateVector {
            norm: n,
            eps: DEGENERATE_EPS,
        });
    }
    Ok(n)
}

pub fn l2_normalize(v: &Tensor) -> Result<Tensor> {
    let n = check_norm(v.data())?;
    Tensor::new(v.shape(), v.data().iter().map(|x| x / n).collect())
}

/// Cosine of the angle between two non-degenerate vectors, clamped to [-1, 1].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine_similarity", &[a.len()], &[b.len()]));
    }
    let (na, nb) = (check_norm(a)?, check_norm(b)?);
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean of the rows of a `t×d` matrix where `mask` is set.
pub fn mean_pool_masked(states: &Tensor, mask: &[bool]) -> Result<Tensor> {
    let (t, d) = (states.rows(), states.cols());
    if mask.len() != t {
        return Err(Error::shape(
            "mean_pool_masked",
            states.shape(),
            &[mask.len()],
        ));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::EmptyPool);
    }
    let mut out = vec![0.0; d];
    for r in (0..t).filter(|&r| mask[r]) {
        for (o, x) in out.iter_mut().zip(states.row(r)) {
            *o += x;
        }
    }
    out.iter_mut().for_each(|o| *o /= count as f64);
    Tensor::new(&[d], out)
}
