// SPDX-License-Identifier: Apache-2.0

use crate::error::{Error, Result};

/// Linear warmup from 0 to `base_lr` over `warmup_steps`, then linear decay
/// to 0 at `total_steps`. Optimizer step `s` (0-based) uses `lr_at(s, ..)`.
pub fn lr_at(step: usize, base_lr: f64, warmup_steps: usize, total_steps: usize) -> Result<f64> {
    if total_steps <= warmup_steps {
        return Err(Error::Config(format!(
            "total_steps {total_steps} must exceed warmup_steps {warmup_steps}"
        )));
    }
    if step > total_steps {
        return Err(Error::Contract(format!(
            "step {step} beyond total_steps {total_steps}"
        )));
    }
    Ok(if step < warmup_steps {
        base_lr * step as f64 / warmup_steps as f64
    } else {
        base_lr * (total_steps - step) as f64 / (total_steps - warmup_steps) as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        assert_eq!(lr_at(0, 2e-4, 50, 100).unwrap(), 0.0);
        assert_eq!(lr_at(50, 2e-4, 50, 100).unwrap(), 2e-4);
        assert_eq!(lr_at(75, 2e-4, 50, 100).unwrap(), 1e-4);
        assert_eq!(lr_at(100, 2e-4, 50, 100).unwrap(), 0.0);
        assert_eq!(lr_at(0, 1.0, 0, 4).unwrap(), 1.0);
    }

    #[test]
    fn warmup_must_fit() {
        assert!(matches!(lr_at(0, 1.0, 50, 50), Err(Error::Config(_))));
        assert!(lr_at(0, 1.0, 60, 50).is_err());
    }

    #[test]
    fn ramp_is_monotone_then_decays() {
        let lrs: Vec<f64> = (0..=20).map(|s| lr_at(s, 1.0, 5, 20).unwrap()).collect();
        assert!(lrs[..=5].windows(2).all(|w| w[0] < w[1]));
        assert!(lrs[5..].windows(2).all(|w| w[0] > w[1]));
    }
}
