// SPDX-License-Identifier: Apache-2.0

//! Exact t-SNE.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Rng, Tensor};

const ENTROPY_TOL: f64 = 1e-5;
const BANDWIDTH_STEPS: usize = 200;
const INIT_STD: f64 = 1e-4;
const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    /// Iterations run with exaggeration and the initial momentum.
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 10.0,
            iterations: 500,
            learning_rate: 100.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 42,
        }
    }
}

fn squared_distances(x: &Tensor) -> Vec<f64> {
    let n = x.rows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// Symmetrized input affinities `P` (N×N, zero diagonal, summing to 1).
/// Each row's Gaussian precision is bisected until the row entropy is
/// within tolerance of `ln(perplexity)`.
pub fn tsne_affinities(x: &Tensor, perplexity: f64) -> Result<Tensor> {
    let n = x.rows();
    if !x.is_matrix() || !(perplexity >= 1.0) || 3.0 * perplexity >= n as f64 {
        return Err(Error::Config(format!(
            "perplexity must satisfy 1 ≤ perplexity < N/3, got {perplexity} for N = {n}"
        )));
    }
    let d = squared_distances(x);
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let row = &d[i * n..(i + 1) * n];
        let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
        let mut cond = vec![0.0; n];
        for _ in 0..BANDWIDTH_STEPS {
            // Shift by the nearest neighbour so the largest weight is 1.
            let dmin = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &v)| v)
                .fold(f64::INFINITY, f64::min);
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..n {
                cond[j] = if j == i {
                    0.0
                } else {
                    (-(row[j] - dmin) * beta).exp()
                };
                sum += cond[j];
                weighted += cond[j] * (row[j] - dmin);
            }
            let entropy = sum.ln() + beta * weighted / sum;
            cond.iter_mut().for_each(|c| *c /= sum);
            let diff = entropy - target;
            if diff.abs() < ENTROPY_TOL {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() {
                    (beta + hi) / 2.0
                } else {
                    beta * 2.0
                };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        p[i * n..(i + 1) * n].copy_from_slice(&cond);
    }
    let mut sym = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sym[i * n + j] = (p[i * n + j] + p[j * n + i]) / (2.0 * n as f64);
        }
    }
    Tensor::new(&[n, n], sym)
}

/// Student-t output affinities `Q` for an embedding `y` (N×2), returned
/// together with the unnormalized kernel `1 / (1 + ‖yᵢ − yⱼ‖²)`.
pub fn tsne_kernel(y: &Tensor) -> Result<(Tensor, Tensor)> {
    let n = y.rows();
    let d = squared_distances(y);
    let mut num = vec![0.0; n * n];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                num[i * n + j] = 1.0 / (1.0 + d[i * n + j]);
                total += num[i * n + j];
            }
        }
    }
    let q = num.iter().map(|v| v / total).collect();
    Ok((Tensor::new(&[n, n], q)?, Tensor::new(&[n, n], num)?))
}

/// Exact t-SNE to two dimensions by gradient descent with momentum, early
/// exaggeration and per-coordinate adaptive gains.
pub fn tsne_2d(x: &Tensor, cfg: &TsneConfig) -> Result<Tensor> {
    let n = x.rows();
    let p = tsne_affinities(x, cfg.perplexity)?;
    let mut rng = Rng::derive(cfg.seed, 0x75E_0001);
    let mut y = Tensor::randn(&[n, 2], INIT_STD, &mut rng);
    let mut update = vec![0.0; n * 2];
    let mut gains = vec![1.0f64; n * 2];
    for iter in 0..cfg.iterations {
        let early = iter < cfg.exaggeration_iters;
        let exaggeration = if early { cfg.early_exaggeration } else { 1.0 };
        let momentum = if early {
            cfg.initial_momentum
        } else {
            cfg.final_momentum
        };
        let (q, num) = tsne_kernel(&y)?;
        let mut grad = vec![0.0; n * 2];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = 4.0 * (exaggeration * p.at(i, j) - q.at(i, j)) * num.at(i, j);
                for c in 0..2 {
                    grad[i * 2 + c] += w * (y.at(i, c) - y.at(j, c));
                }
            }
        }
        for k in 0..n * 2 {
            gains[k] = if (grad[k] > 0.0) != (update[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(MIN_GAIN)
            };
            update[k] = momentum * update[k] - cfg.learning_rate * gains[k] * grad[k];
            y.data_mut()[k] += update[k];
        }
        // Re-center to keep the layout anchored at the origin.
        for c in 0..2 {
            let m = (0..n).map(|i| y.at(i, c)).sum::<f64>() / n as f64;
            for i in 0..n {
                y.data_mut()[i * 2 + c] -= m;
            }
        }
    }
    if !y.all_finite() {
        return Err(Error::NonFinite("t-SNE coordinates".into()));
    }
    Ok(y)
}
