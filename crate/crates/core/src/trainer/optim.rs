// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// AdamW hyperparameters. The learning rate comes from the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment estimates for each parameter, in the order parameters are passed
/// to [`adamw_step`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One decoupled-weight-decay Adam update:
///
/// ```text
/// m ← β₁m + (1−β₁)g        v ← β₂v + (1−β₂)g²
/// m̂ = m/(1−β₁ᵗ)            v̂ = v/(1−β₂ᵗ)
/// θ ← θ − lr·(m̂/(√v̂ + ε) + λθ)
/// ```
///
/// Any non-finite gradient aborts the step before anything is modified.
pub fn adamw_step(
    params: &mut [&mut Tensor],
    grads: &[&[f64]],
    state: &mut OptimizerState,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Contract(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() {
            return Err(Error::shape("adamw_step", p.shape(), &[g.len()]));
        }
        if let Some(j) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of parameter {i} at coordinate {j}"
            )));
        }
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
    } else if state.m.len() != params.len()
        || state
            .m
            .iter()
            .zip(params.iter())
            .any(|(m, p)| m.len() != p.len())
    {
        return Err(Error::Contract(
            "optimizer state does not match parameters".into(),
        ));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((theta, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.iter())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *theta -= lr * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * *theta);
        }
    }
    Ok(())
}

/// Scales gradients in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let mut p = Tensor::vector(vec![1.0, -2.0, 3.0]).unwrap();
        let before = p.clone();
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut st = OptimizerState::new();
        for _ in 0..5 {
            adamw_step(&mut [&mut p], &[&[0.0, 0.0, 0.0]], &mut st, 0.1, &cfg).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.t, 5);
    }

    #[test]
    fn first_step_hand_value() {
        // m̂ = 0.1, v̂ = 0.01 → update = 0.01·(0.1/(0.1+1e-8) + 0.01·1.0)
        let mut p = Tensor::scalar(1.0);
        let mut st = OptimizerState::new();
        adamw_step(
            &mut [&mut p],
            &[&[0.1]],
            &mut st,
            0.01,
            &AdamWConfig::default(),
        )
        .unwrap();
        let expected = 1.0 - 0.01 * (0.1 / (0.1 + 1e-8) + 0.01);
        assert_abs_diff_eq!(p.data()[0], expected, epsilon = 1e-15);
        assert_abs_diff_eq!(p.data()[0], 0.98990, epsilon = 1e-5);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut p = Tensor::scalar(1.0);
        let mut st = OptimizerState::new();
        let cfg = AdamWConfig::default();
        for _ in 0..100 {
            let g = 2.0 * p.data()[0];
            adamw_step(&mut [&mut p], &[&[g]], &mut st, 0.05, &cfg).unwrap();
        }
        assert!(p.data()[0].abs() < 1e-2, "{}", p.data()[0]);
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let mut p = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let mut st = OptimizerState::new();
        let err = adamw_step(
            &mut [&mut p],
            &[&[0.1, f64::NAN]],
            &mut st,
            0.1,
            &AdamWConfig::default(),
        );
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(p.data(), &[1.0, 2.0]);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn clipping_scales_to_max() {
        let mut g = vec![vec![3.0], vec![4.0]];
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert_abs_diff_eq!(g[0][0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1][0], 0.8, epsilon = 1e-15);
    }
}
