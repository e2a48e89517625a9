//! Error function, normal and log-normal distributions, and summation.

use std::f64::consts::{PI, SQRT_2};

// Abramowitz & Stegun 7.1.26, |error| <= 1.5e-7 on the real line.
const P: f64 = 0.327_591_1;
const A: [f64; 5] = [
    0.254_829_592,
    -0.284_496_736,
    1.421_413_741,
    -1.453_152_027,
    1.061_405_429,
];

/// Complementary error function. Evaluated directly for positive
/// arguments so that tail values keep their relative precision.
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    let t = 1.0 / (1.0 + P * x);
    let poly = t * (A[0] + t * (A[1] + t * (A[2] + t * (A[3] + t * A[4]))));
    poly * (-x * x).exp()
}

pub fn erf(x: f64) -> f64 {
    1.0 - erfc(x)
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Log-normal CDF; zero for `x <= 0`.
pub fn lognormal_cdf(x: f64, mu: f64, sigma: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x == f64::INFINITY {
        return 1.0;
    }
    normal_cdf((x.ln() - mu) / sigma)
}

/// Log-normal density; zero for `x <= 0`.
pub fn lognormal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    if x <= 0.0 || !x.is_finite() {
        return 0.0;
    }
    let z = (x.ln() - mu) / sigma;
    (-0.5 * z * z).exp() / (x * sigma * (2.0 * PI).sqrt())
}

/// Pairwise (cascade) summation: result depends only on the order of
/// `values`, never on how they were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 8;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Independent child seed for work item `index` (SplitMix64 finalizer).
pub fn derive_seed(root: u64, index: u64) -> u64 {
    let mut z = root ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| pairwise_sum(values) / values.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erf_error_bound() {
        for i in -6000..=6000 {
            let x = i as f64 * 1e-3;
            let exact = statrs::function::erf::erf(x);
            assert!((erf(x) - exact).abs() <= 1.5e-7, "x = {x}");
            let exact_c = statrs::function::erf::erfc(x);
            assert!((erfc(x) - exact_c).abs() <= 1.5e-7, "x = {x}");
        }
    }

    #[test]
    fn lognormal_examples() {
        assert!((lognormal_cdf(1.0, 0.0, 0.5) - 0.5).abs() < 1.5e-7);
        assert!((lognormal_cdf(3.0_f64.exp(), 3.0, 2.0) - 0.5).abs() < 1.5e-7);
        // Phi(1) = 0.841344746068543 (mpmath)
        assert!((lognormal_cdf(0.5_f64.exp(), 0.0, 0.5) - 0.841_344_746_068_543).abs() < 1.5e-7);
        assert_eq!(lognormal_cdf(1e300, 0.0, 0.5), 1.0);
        assert_eq!(lognormal_cdf(f64::INFINITY, 0.0, 0.5), 1.0);
        assert_eq!(lognormal_cdf(0.0, 0.0, 0.5), 0.0);
        assert_eq!(lognormal_cdf(-3.0, 0.0, 0.5), 0.0);
    }

    #[test]
    fn lognormal_pdf_matches_reference() {
        use statrs::distribution::{Continuous, LogNormal};
        let d = LogNormal::new(0.3, 0.7).unwrap();
        for x in [0.01, 0.5, 1.0, 2.5, 40.0] {
            assert!((lognormal_pdf(x, 0.3, 0.7) - d.pdf(x)).abs() < 1e-12);
        }
        assert_eq!(lognormal_pdf(0.0, 0.0, 1.0), 0.0);
    }

    #[test]
    fn tail_keeps_relative_precision() {
        let tail = normal_cdf(-8.0);
        let exact = 6.220_960_574_271_785e-16;
        // no cancellation: the tail is off by the approximation's ~1%, not swamped
        assert!((tail / exact - 1.0).abs() < 2e-2, "{tail}");
    }

    #[test]
    fn pairwise_matches_naive_on_exact_values() {
        let v: Vec<f64> = (0..1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 499_500.0);
        assert_eq!(mean(&[]), None);
    }
}
