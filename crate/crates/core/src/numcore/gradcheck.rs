// SPDX-License-Identifier: Apache-2.0

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Compares tape gradients of a scalar function against central differences.
///
/// `f` records its computation on the given tape starting from the input
/// variable and returns the scalar output. Returns the largest
/// `|analytic − numeric| / max(1, |analytic|)` over all coordinates of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let y = f(&mut tape, xv)?;
    tape.backward(y)?;
    let analytic = tape.grad(xv).expect("leaf gradient").to_vec();

    let eval = |probe: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(probe.clone());
        let y = f(&mut tape, xv)?;
        tape.value(y).item()
    };

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    #[test]
    fn sum_is_exact() {
        let mut rng = Rng::new(1);
        let x = Tensor::randn(&[7], 1.0, &mut rng);
        let err = grad_check(|t, v| Ok(t.sum(v)), &x, 1e-5).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn softmax_cross_entropy() {
        let mut rng = Rng::new(2);
        let x = Tensor::randn(&[3, 5], 1.0, &mut rng);
        let err = grad_check(|t, v| t.cross_entropy(v, &[0, 4, 2]), &x, 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    fn check(f: impl Fn(&mut Tape, Var) -> Result<Var>, shape: &[usize], seed: u64) {
        let mut rng = Rng::new(seed);
        let x = Tensor::randn(shape, 1.0, &mut rng);
        let err = grad_check(f, &x, 1e-5).unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    // Each differentiable op in isolation, reduced to a scalar through a
    // fixed random projection so every output coordinate matters.
    fn project(t: &mut Tape, y: Var, seed: u64) -> Result<Var> {
        let mut rng = Rng::new(seed);
        let shape = t.shape(y).to_vec();
        let w = t.constant(Tensor::randn(&shape, 1.0, &mut rng));
        t.dot(y, w)
    }

    #[test]
    fn per_op_gradients() {
        let mut rng = Rng::new(99);
        let w = Tensor::randn(&[6, 4], 1.0, &mut rng);
        let gain = Tensor::randn(&[4], 1.0, &mut rng);
        let k = Tensor::randn(&[6, 4], 1.0, &mut rng);

        check(
            |t, x| {
                let b = t.constant(w.clone());
                let y = t.matmul_with(x, b, true)?;
                project(t, y, 1)
            },
            &[3, 4],
            10,
        );
        check(
            |t, x| {
                let b = t.constant(w.clone());
                let y = t.matmul_with(b, x, false)?;
                project(t, y, 1)
            },
            &[4, 2],
            11,
        );
        check(
            |t, x| {
                let y = t.silu(x);
                project(t, y, 2)
            },
            &[3, 4],
            12,
        );
        check(
            |t, x| {
                let y = t.mul(x, x)?;
                project(t, y, 3)
            },
            &[3, 4],
            13,
        );
        check(
            |t, x| {
                let g = t.constant(gain.clone());
                let y = t.rms_norm(x, g, 1e-6)?;
                project(t, y, 4)
            },
            &[3, 4],
            14,
        );
        check(
            |t, g| {
                let x = t.constant(k.clone());
                let y = t.rms_norm(x, g, 1e-6)?;
                project(t, y, 4)
            },
            &[4],
            15,
        );
        check(
            |t, x| {
                let y = t.l2_normalize(x)?;
                project(t, y, 5)
            },
            &[2, 4],
            16,
        );
        check(
            |t, x| {
                let y = t.mean_pool_masked(x, &[true, false, true])?;
                project(t, y, 6)
            },
            &[3, 4],
            17,
        );
        check(
            |t, x| {
                let y = t.gather(x, &[2, 0, 2])?;
                project(t, y, 7)
            },
            &[3, 4],
            18,
        );
        check(
            |t, x| {
                let y = t.scale(x, -1.7);
                let z = t.sub(y, x)?;
                project(t, z, 8)
            },
            &[5],
            19,
        );
        check(
            |t, x| {
                let kk = t.constant(k.clone());
                let y = t.causal_attention(x, kk, x, 2, 3)?;
                project(t, y, 9)
            },
            &[6, 4],
            20,
        );
        check(
            |t, x| {
                let qq = t.constant(k.clone());
                let y = t.causal_attention(qq, x, qq, 2, 3)?;
                project(t, y, 9)
            },
            &[6, 4],
            21,
        );
        check(
            |t, x| {
                let y = t.rope(x, 2, 3, 10_000.0)?;
                project(t, y, 11)
            },
            &[6, 4],
            23,
        );
        check(
            |t, x| {
                let a = t.scale(x, 0.5);
                let s = t.stack(&[x, a])?;
                project(t, s, 10)
            },
            &[4],
            22,
        );
    }
}
