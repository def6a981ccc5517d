// SPDX-License-Identifier: Apache-2.0

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CF_TOL: f64 = 1e-12;
const CF_MAX_ITER: usize = 300;

// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection keeps the series in its accurate range.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut sum = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        sum += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + sum.ln()
}

/// Regularized incomplete beta `I_x(a, b)` by continued fraction.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !(0.0..=1.0).contains(&x) {
        return Err(Error::Contract(format!(
            "incomplete beta undefined at a={a}, b={b}, x={x}"
        )));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_cf(a, b, x)? / a)
    } else {
        Ok(1.0 - front * beta_cf(b, a, 1.0 - x)? / b)
    }
}

// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_cf(a: f64, b: f64, x: f64) -> Result<f64> {
    const TINY: f64 = 1e-300;
    let floor = |v: f64| if v.abs() < TINY { TINY } else { v };
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 / floor(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / floor(1.0 + aa * d);
        c = floor(1.0 + aa / c);
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / floor(1.0 + aa * d);
        c = floor(1.0 + aa / c);
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < CF_TOL {
            return Ok(h);
        }
    }
    Err(Error::NonFinite(format!(
        "incomplete beta continued fraction did not converge in {CF_MAX_ITER} iterations (a={a}, b={b}, x={x})"
    )))
}

/// Student-t cumulative distribution `P(T ≤ t)` with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> Result<f64> {
    if t.is_infinite() {
        return Ok(if t > 0.0 { 1.0 } else { 0.0 });
    }
    let tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))?;
    Ok(if t > 0.0 { 1.0 - tail } else { tail })
}

/// Alternative hypothesis of the paired test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tails {
    #[default]
    Two,
    /// Post exceeds pre.
    Greater,
    /// Post falls below pre.
    Less,
}

impl FromStr for Tails {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two" => Ok(Tails::Two),
            "greater" => Ok(Tails::Greater),
            "less" => Ok(Tails::Less),
            other => Err(Error::Config(format!(
                "unknown tails {other:?}; expected two, greater or less"
            ))),
        }
    }
}

impl fmt::Display for Tails {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tails::Two => "two",
            Tails::Greater => "greater",
            Tails::Less => "less",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Two-tailed paired t-test on `post − pre`.
pub fn paired_t_test(pre: &[f64], post: &[f64]) -> Result<TTest> {
    paired_t_test_with(pre, post, Tails::Two)
}

pub fn paired_t_test_with(pre: &[f64], post: &[f64], tails: Tails) -> Result<TTest> {
    if pre.len() != post.len() {
        return Err(Error::shape("paired_t_test", &[pre.len()], &[post.len()]));
    }
    let n = pre.len();
    if n < 2 {
        return Err(Error::Contract(format!(
            "paired t-test needs at least 2 pairs, got {n}"
        )));
    }
    let d: Vec<f64> = post.iter().zip(pre).map(|(b, a)| b - a).collect();
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("paired t-test input".into()));
    }
    let df = n - 1;
    let (m, sd) = (mean(&d), sample_std(&d));
    let t = if sd == 0.0 {
        if m == 0.0 {
            0.0
        } else {
            m.signum() * f64::INFINITY
        }
    } else {
        m / (sd / (n as f64).sqrt())
    };
    let p = match tails {
        Tails::Two if t == 0.0 => 1.0,
        Tails::Two if t.is_infinite() => 0.0,
        Tails::Two => {
            regularized_incomplete_beta(df as f64 / 2.0, 0.5, df as f64 / (df as f64 + t * t))?
        }
        Tails::Greater => 1.0 - student_t_cdf(t, df as f64)?,
        Tails::Less => student_t_cdf(t, df as f64)?,
    };
    Ok(TTest {
        t,
        p: p.clamp(0.0, 1.0),
        df,
    })
}
