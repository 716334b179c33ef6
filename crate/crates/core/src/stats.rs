//! Normal distribution helpers and Kolmogorov–Smirnov distances.

use statrs::function::erf::erfc;
use std::f64::consts::SQRT_2;

/// Asymptotic Kolmogorov quantile at level 1%.
pub const KS_C_1PCT: f64 = 1.627_6;

/// Mean of the limiting Kolmogorov distribution, `√(π/2) ln 2`.
pub const KS_NULL_MEAN: f64 = 0.868_731;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Two-sided 1% critical value of the KS statistic for `m` samples.
pub fn ks_critical_1pct(m: usize) -> f64 {
    let s = (m as f64).sqrt();
    KS_C_1PCT / (s + 0.12 + 0.11 / s)
}

/// Expected KS distance of `m` exact draws from the reference law.
pub fn ks_null_level(m: usize) -> f64 {
    KS_NULL_MEAN / (m as f64).sqrt()
}

/// `sup_x |F_m(x) - F(x)|` for the empirical CDF of `samples`; ties are
/// handled by comparing both one-sided limits at each atom.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let m = xs.len() as f64;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < xs.len() {
        let mut j = i;
        while j < xs.len() && xs[j] == xs[i] {
            j += 1;
        }
        let f = cdf(xs[i]);
        let below = cdf(xs[i].next_down());
        d = d.max((j as f64 / m - f).abs()).max((below - i as f64 / m).abs());
        i = j;
    }
    d
}

/// Sample mean and unbiased variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-10);
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_distance(&[0.0; 10], |x| if x < 0.0 { 0.0 } else { 1.0 }), 0.0);
        // One atom at 0 against the standard normal: both one-sided gaps are 1/2.
        assert!((ks_distance(&[0.0; 4], normal_cdf) - 0.5).abs() < 1e-15);
        let d = ks_distance(&[0.5], |x| x);
        assert!((d - 0.5).abs() < 1e-15);
        assert!((ks_critical_1pct(10_000) - 0.016256).abs() < 1e-6);
    }
}
