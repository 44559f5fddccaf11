//! Small numerical building blocks shared across the engine: standard normal
//! functions, Gauss-Legendre panels, and order-stable summation.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::OnceLock;

use gauss_quad::GaussLegendre;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function, accurate in both tails.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// `E[max(X, 0)]` for `X ~ N(mean, sd^2)`.
pub fn rectified_mean(mean: f64, sd: f64) -> f64 {
    if sd <= 0.0 {
        return mean.max(0.0);
    }
    let z = mean / sd;
    mean * norm_cdf(z) + sd * norm_pdf(z)
}

/// `E[max(X, 0)^2]` for `X ~ N(mean, sd^2)`.
pub fn rectified_second_moment(mean: f64, sd: f64) -> f64 {
    if sd <= 0.0 {
        return mean.max(0.0).powi(2);
    }
    let z = mean / sd;
    (mean * mean + sd * sd) * norm_cdf(z) + mean * sd * norm_pdf(z)
}

/// Reference Gauss-Legendre rule on `[-1, 1]`, cached per degree.
#[derive(Debug, Clone)]
pub struct LegendreRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl LegendreRule {
    pub fn new(degree: usize) -> Self {
        let rule = GaussLegendre::new(degree.max(2)).expect("degree >= 2");
        let mut pairs: Vec<(f64, f64)> = rule.into_node_weight_pairs();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (nodes, weights) = pairs.into_iter().unzip();
        Self { nodes, weights }
    }

    /// Integrates `f` over `[a, b]`.
    #[inline]
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }
}

/// Shared 16-point rule used for panel integration.
pub fn legendre16() -> &'static LegendreRule {
    static RULE: OnceLock<LegendreRule> = OnceLock::new();
    RULE.get_or_init(|| LegendreRule::new(16))
}

/// Shared rule of arbitrary degree; a handful of degrees are cached.
pub fn legendre(degree: usize) -> LegendreRule {
    match degree {
        16 => legendre16().clone(),
        _ => LegendreRule::new(degree),
    }
}

/// Pairwise summation with a fixed split order; the result depends only on
/// the slice contents, never on how the values were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        let mut s = 0.0;
        for v in values {
            s += v;
        }
        return s;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Mean and standard error of a sample, summed pairwise.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(values) / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// `(1 - exp(-x)) / x`, continuous at zero.
#[inline]
pub fn one_minus_exp_over(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - 0.5 * x + x * x / 6.0
    } else {
        -(-x).exp_m1() / x
    }
}

#[allow(dead_code)]
pub(crate) const TWO_PI: f64 = 2.0 * PI;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cdf_symmetry_and_tails() {
        assert_abs_diff_eq!(norm_cdf(0.0), 0.5, epsilon = 1e-16);
        for x in [0.3, 1.0, 2.5, 7.0] {
            assert_abs_diff_eq!(norm_cdf(x) + norm_cdf(-x), 1.0, epsilon = 1e-15);
        }
        assert!(norm_cdf(-30.0) > 0.0);
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let rule = legendre16();
        let v = rule.integrate(0.0, 2.0, |x| x.powi(7) - 3.0 * x * x);
        assert_abs_diff_eq!(v, 256.0 / 8.0 - 8.0, epsilon = 1e-11);
    }

    #[test]
    fn rectified_standard_normal() {
        assert_abs_diff_eq!(rectified_mean(0.0, 1.0), 1.0 / TWO_PI.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(rectified_second_moment(0.0, 1.0), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499_500.0);
    }
}
