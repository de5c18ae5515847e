#![allow(dead_code)]

use ivy_core::datagen::{BinaryTable, ConfounderLink, SyntheticSpec, ValidGroup};

/// `P(a = +1 | a-index, b-index)` table with logistic form.
pub fn logistic_table(intercept: f64, slope_a: f64, slope_b: f64) -> BinaryTable {
    let s = |t: f64| 1.0 / (1.0 + (-t).exp());
    let mut t = [0.0; 4];
    for (ia, a) in [-1.0, 1.0].into_iter().enumerate() {
        for (ib, b) in [-1.0, 1.0].into_iter().enumerate() {
            t[2 * ia + ib] = s(intercept + slope_a * a + slope_b * b);
        }
    }
    t
}

/// Conditionally independent valid candidates, optional noise, null effect.
pub fn ci_spec(accuracies: &[f64], prior_z: f64, noise: usize) -> SyntheticSpec {
    SyntheticSpec {
        prior_z,
        prior_c: 0.5,
        confounder_link: ConfounderLink::Independent,
        valid_groups: vec![ValidGroup::Independent { accuracies: accuracies.to_vec() }],
        invalid_accuracies: Vec::new(),
        noise_count: noise,
        x_table: logistic_table(0.0, 0.8, 1.0),
        y_table: logistic_table(0.0, 0.0, 1.0),
    }
}

/// `erf` by its Maclaurin series; accurate to about 1e-14 for `|x| ≤ 3`.
pub fn erf_series(x: f64) -> f64 {
    assert!(x.abs() <= 3.0);
    let mut term = x;
    let mut sum = x;
    let x2 = x * x;
    let mut n = 0.0;
    while term.abs() > 1e-17 * sum.abs().max(1e-300) {
        n += 1.0;
        term *= -x2 / n;
        sum += term / (2.0 * n + 1.0);
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

pub fn phi(x: f64) -> f64 {
    0.5 * (1.0 + erf_series(x / std::f64::consts::SQRT_2))
}

/// Upper quantile `ζ` with `1 − Φ(ζ) = q`, by bisection on the series.
pub fn upper_quantile(q: f64) -> f64 {
    let (mut lo, mut hi) = (-4.0, 4.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if 1.0 - phi(mid) > q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
