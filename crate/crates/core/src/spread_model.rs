//! Hull-White collateral spreads and the domestic short rate.
//!
//! Every process is written as `x(t) = mean_curve(t) + u(t)` with `u` a
//! centred Ornstein-Uhlenbeck process started at zero. All moment formulas
//! below depend on times only through differences, so they are invariant
//! under shifts of the time origin.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::curve::{SpreadCurve, TIME_EPS};
use crate::error::{CtdError, Result};
use crate::numerics::{legendre16, one_minus_exp_over};

/// Smallest admissible eigenvalue of a correlation matrix.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// `kappa * dt` below which piecewise theta switches to its limit form.
const THETA_DEGENERACY: f64 = 1e-14;

/// One-factor Hull-White parameterisation of a single rate or spread.
#[derive(Debug, Clone, PartialEq)]
pub struct HullWhiteSpec {
    kappa: f64,
    xi: f64,
    mean_curve: SpreadCurve,
    initial_value: f64,
}

impl HullWhiteSpec {
    pub fn new(kappa: f64, xi: f64, mean_curve: SpreadCurve) -> Result<Self> {
        let initial_value = mean_curve.values()[0];
        Self::with_initial_value(kappa, xi, mean_curve, initial_value)
    }

    pub fn with_initial_value(
        kappa: f64,
        xi: f64,
        mean_curve: SpreadCurve,
        initial_value: f64,
    ) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(CtdError::validation(format!("kappa must be positive, got {kappa}")));
        }
        if !(xi >= 0.0 && xi.is_finite()) {
            return Err(CtdError::validation(format!("xi must be non-negative, got {xi}")));
        }
        let start = mean_curve.values()[0];
        if (initial_value - start).abs() > 1e-15 {
            return Err(CtdError::validation(format!(
                "initial value {initial_value} differs from mean curve start {start}"
            )));
        }
        Ok(Self {
            kappa,
            xi,
            mean_curve,
            initial_value,
        })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn mean_curve(&self) -> &SpreadCurve {
        &self.mean_curve
    }

    pub fn initial_value(&self) -> f64 {
        self.initial_value
    }

    pub fn with_xi(&self, xi: f64) -> Result<Self> {
        Self::new(self.kappa, xi, self.mean_curve.clone())
    }

    pub fn with_kappa(&self, kappa: f64) -> Result<Self> {
        Self::new(kappa, self.xi, self.mean_curve.clone())
    }

    pub fn with_curve(&self, curve: SpreadCurve) -> Result<Self> {
        Self::new(self.kappa, self.xi, curve)
    }

    /// Mean decay integral `(1 - e^{-kappa tau}) / kappa`.
    pub fn decay_integral(&self, tau: f64) -> f64 {
        tau * one_minus_exp_over(self.kappa * tau)
    }

    /// Variance of `u(t)` accumulated over an elapsed time `tau`.
    pub fn variance(&self, tau: f64) -> f64 {
        let two_k = 2.0 * self.kappa;
        self.xi * self.xi * tau * one_minus_exp_over(two_k * tau)
    }
}

/// Instantaneous correlations; index 0 is the domestic-rate driver.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    entries: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    pub fn new(entries: Vec<Vec<f64>>) -> Result<Self> {
        let n = entries.len();
        if n == 0 || entries.iter().any(|row| row.len() != n) {
            return Err(CtdError::validation("correlation matrix must be square"));
        }
        for i in 0..n {
            if entries[i][i] != 1.0 {
                return Err(CtdError::validation(format!(
                    "correlation diagonal entry {i} is {} instead of 1",
                    entries[i][i]
                )));
            }
            for j in 0..n {
                let r = entries[i][j];
                if !(-1.0..=1.0).contains(&r) {
                    return Err(CtdError::validation(format!(
                        "correlation entry ({i},{j}) = {r} outside [-1, 1]"
                    )));
                }
                if r != entries[j][i] {
                    return Err(CtdError::validation(format!(
                        "correlation matrix not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let m = DMatrix::from_fn(n, n, |i, j| entries[i][j]);
        let min_eig = SymmetricEigen::new(m).eigenvalues.min();
        if min_eig < -PSD_TOLERANCE {
            return Err(CtdError::validation(format!(
                "correlation matrix not positive semidefinite (smallest eigenvalue {min_eig:.3e})"
            )));
        }
        Ok(Self { entries })
    }

    pub fn identity(n: usize) -> Self {
        let entries = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self { entries }
    }

    /// Domestic driver independent of two spreads correlated at `rho`.
    pub fn two_spreads(rho: f64) -> Result<Self> {
        Self::new(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, rho],
            vec![0.0, rho, 1.0],
        ])
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.entries
    }
}

/// Domestic rate `r_0` plus `N` collateral spreads.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketModel {
    pub domestic: HullWhiteSpec,
    pub spreads: Vec<HullWhiteSpec>,
    pub correlations: CorrelationMatrix,
}

impl MarketModel {
    pub fn new(
        domestic: HullWhiteSpec,
        spreads: Vec<HullWhiteSpec>,
        correlations: CorrelationMatrix,
    ) -> Result<Self> {
        if spreads.is_empty() {
            return Err(CtdError::validation("at least one collateral spread required"));
        }
        if correlations.dim() != spreads.len() + 1 {
            return Err(CtdError::validation(format!(
                "correlation matrix is {0}x{0} but model has {1} processes",
                correlations.dim(),
                spreads.len() + 1
            )));
        }
        Ok(Self {
            domestic,
            spreads,
            correlations,
        })
    }

    pub fn n_spreads(&self) -> usize {
        self.spreads.len()
    }

    /// Spec of process `p`: 0 is the domestic rate, `1..=N` the spreads.
    pub fn process(&self, p: usize) -> &HullWhiteSpec {
        if p == 0 {
            &self.domestic
        } else {
            &self.spreads[p - 1]
        }
    }

    /// Correlation between spreads `i` and `j` (both 1-based).
    pub fn spread_rho(&self, i: usize, j: usize) -> f64 {
        self.correlations.get(i, j)
    }

    /// Errors unless every curve covers `[t0, t_end]`.
    pub fn check_horizon(&self, t0: f64, t_end: f64) -> Result<()> {
        if t_end < t0 - TIME_EPS {
            return Err(CtdError::validation(format!(
                "maturity {t_end} precedes start {t0}"
            )));
        }
        self.domestic.mean_curve().check_covers(t0, t_end)?;
        for s in &self.spreads {
            s.mean_curve().check_covers(t0, t_end)?;
        }
        Ok(())
    }

    pub fn with_spread(&self, i: usize, spec: HullWhiteSpec) -> Self {
        let mut m = self.clone();
        m.spreads[i - 1] = spec;
        m
    }

    pub fn with_domestic(&self, spec: HullWhiteSpec) -> Self {
        let mut m = self.clone();
        m.domestic = spec;
        m
    }

    /// All volatilities (domestic and spreads) replaced by `xi`.
    pub fn with_all_xi(&self, xi: f64) -> Result<Self> {
        let mut m = self.clone();
        m.domestic = m.domestic.with_xi(xi)?;
        for s in m.spreads.iter_mut() {
            *s = s.with_xi(xi)?;
        }
        Ok(m)
    }

    /// Spread volatilities replaced by `xi`, domestic untouched.
    pub fn with_spread_xi(&self, xi: f64) -> Result<Self> {
        let mut m = self.clone();
        for s in m.spreads.iter_mut() {
            *s = s.with_xi(xi)?;
        }
        Ok(m)
    }

    /// Curves and time origin translated by `dt`.
    pub fn time_translated(&self, dt: f64) -> Self {
        let tr = |s: &HullWhiteSpec| {
            HullWhiteSpec::new(s.kappa, s.xi, s.mean_curve.time_translated(dt)).unwrap()
        };
        Self {
            domestic: tr(&self.domestic),
            spreads: self.spreads.iter().map(tr).collect(),
            correlations: self.correlations.clone(),
        }
    }
}

/// `E[q(t)] = mean_curve(t)`.
pub fn spread_mean(spec: &HullWhiteSpec, t: f64) -> Result<f64> {
    spec.mean_curve.value(t)
}

/// Long-term mean keeping `E[q(t)]` on the curve in continuous time:
/// `theta(t) = q(t) + q'(t) / kappa` with left derivatives at kinks.
pub fn theta_continuous(spec: &HullWhiteSpec, t: f64) -> Result<f64> {
    let level = spec.mean_curve.value(t)?;
    let slope = spec.mean_curve.left_slope(t)?;
    Ok(level + slope / spec.kappa)
}

/// Piecewise-constant long-term mean on `(t_{k-1}, t_k]` matching the curve
/// at every node of `grid`. Returns one value per interval.
pub fn theta_piecewise(spec: &HullWhiteSpec, grid: &[f64]) -> Result<Vec<f64>> {
    if grid.len() < 2 {
        return Err(CtdError::validation("theta grid needs at least two nodes"));
    }
    spec.mean_curve.check_covers(grid[0], *grid.last().unwrap())?;
    let mut out = Vec::with_capacity(grid.len() - 1);
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            return Err(CtdError::validation("theta grid must be strictly increasing"));
        }
        let (qa, qb) = (spec.mean_curve.at(a), spec.mean_curve.at(b));
        let x = spec.kappa * (b - a);
        let theta = if x < THETA_DEGENERACY {
            0.5 * (qa + qb) + (qb - qa) / x
        } else {
            // (qb e^{k b} - qa e^{k a}) / (e^{k b} - e^{k a}), scaled by e^{-k b}
            let decay = (-x).exp();
            (qb - qa * decay) / -(-x).exp_m1()
        };
        if !theta.is_finite() {
            return Err(CtdError::numerical(format!(
                "theta on ({a}, {b}] is not finite; use the limit (q_a + q_b)/2 + (q_b - q_a)/(kappa dt)"
            )));
        }
        out.push(theta);
    }
    Ok(out)
}

/// Node means of the OU process driven by a piecewise-constant `theta`,
/// started from the curve value at `grid[0]`.
pub fn mean_under_piecewise_theta(spec: &HullWhiteSpec, grid: &[f64], theta: &[f64]) -> Vec<f64> {
    let mut m = spec.mean_curve.at(grid[0]);
    let mut out = vec![m];
    for (w, th) in grid.windows(2).zip(theta) {
        let x = spec.kappa * (w[1] - w[0]);
        m = m * (-x).exp() + th * -(-x).exp_m1();
        out.push(m);
    }
    out
}

/// `Cov[q_i(u), q_j(v)]` for processes started at `t0`.
pub fn spread_cross_covariance(
    spec_i: &HullWhiteSpec,
    spec_j: &HullWhiteSpec,
    rho: f64,
    t0: f64,
    u: f64,
    v: f64,
) -> f64 {
    let (ki, kj) = (spec_i.kappa, spec_j.kappa);
    let m = u.min(v);
    if m <= t0 {
        return 0.0;
    }
    let ks = ki + kj;
    let acc = (m - t0) * one_minus_exp_over(ks * (m - t0));
    spec_i.xi * spec_j.xi * rho * (-(ki * (u - m) + kj * (v - m))).exp() * acc
}

/// `Cov[q_i(s), int_{t0}^{T} q_j]` for `t0 <= s <= T`.
pub fn level_integral_covariance(
    spec_i: &HullWhiteSpec,
    spec_j: &HullWhiteSpec,
    rho: f64,
    t0: f64,
    s: f64,
    t_end: f64,
) -> f64 {
    let scale = spec_i.xi * spec_j.xi * rho;
    if s <= t0 || scale == 0.0 {
        return 0.0;
    }
    let s = s.min(t_end);
    let ks = spec_i.kappa + spec_j.kappa;
    let before = legendre16().integrate(t0, s, |v| {
        (-spec_i.kappa * (s - v)).exp() * (v - t0) * one_minus_exp_over(ks * (v - t0))
    });
    let tail = t_end - s;
    let after = (s - t0) * one_minus_exp_over(ks * (s - t0)) * tail * one_minus_exp_over(spec_j.kappa * tail);
    scale * (before + after)
}

/// `Cov[int_{t0}^{T} q_i, int_{t0}^{T} q_j]`.
///
/// Evaluated as `xi_i xi_j rho / (k_i k_j) * (tau - B(k_i) - B(k_j) + B(k_i + k_j))`
/// with `B(k) = (1 - e^{-k tau}) / k`, which stays accurate for small `k tau`.
pub fn integral_covariance(
    spec_i: &HullWhiteSpec,
    spec_j: &HullWhiteSpec,
    rho: f64,
    t0: f64,
    t_end: f64,
) -> f64 {
    let tau = t_end - t0;
    if tau <= 0.0 || rho == 0.0 {
        return 0.0;
    }
    let scale = spec_i.xi * spec_j.xi * rho;
    if scale == 0.0 {
        return 0.0;
    }
    scale * integrated_ou_kernel(spec_i.kappa, spec_j.kappa, tau)
}

/// `int_0^tau B_a(x) B_b(x) dx` with `B_k(x) = (1 - e^{-k x}) / k`.
pub(crate) fn integrated_ou_kernel(a: f64, b: f64, tau: f64) -> f64 {
    let small = a.max(b) * tau < 1e-3;
    if small {
        // series in powers of tau: tau^3/3 - (a+b) tau^4/8 + ...
        let t3 = tau.powi(3);
        let s1 = a + b;
        let s2 = 7.0 * (a * a + b * b) + 12.0 * a * b;
        return t3 / 3.0 - s1 * t3 * tau / 8.0 + s2 * t3 * tau * tau / 120.0;
    }
    let bf = |k: f64| tau * one_minus_exp_over(k * tau);
    (tau - bf(a) - bf(b) + bf(a + b)) / (a * b)
}

/// `E[exp(-m int_{t0}^{T} q)]` for `m` in `{1, 2}`.
pub fn bond_moment(spec: &HullWhiteSpec, t0: f64, t_end: f64, multiplier: u32) -> Result<f64> {
    if multiplier != 1 && multiplier != 2 {
        return Err(CtdError::validation(format!(
            "bond moment multiplier must be 1 or 2, got {multiplier}"
        )));
    }
    spec.mean_curve.check_covers(t0, t_end)?;
    let m = multiplier as f64;
    let mean = spec.mean_curve.integral(t0, t_end);
    let var = integral_covariance(spec, spec, 1.0, t0, t_end);
    Ok((-m * mean + 0.5 * m * m * var).exp())
}

/// `E[exp(-int q_i) exp(-int q_j)]` over `[t0, T]`.
pub fn joint_bond_moment(
    spec_i: &HullWhiteSpec,
    spec_j: &HullWhiteSpec,
    rho: f64,
    t0: f64,
    t_end: f64,
) -> Result<f64> {
    spec_i.mean_curve.check_covers(t0, t_end)?;
    spec_j.mean_curve.check_covers(t0, t_end)?;
    let mu = -(spec_i.mean_curve.integral(t0, t_end) + spec_j.mean_curve.integral(t0, t_end));
    let v = integral_covariance(spec_i, spec_i, 1.0, t0, t_end)
        + integral_covariance(spec_j, spec_j, 1.0, t0, t_end)
        + 2.0 * integral_covariance(spec_i, spec_j, rho, t0, t_end);
    Ok((mu + 0.5 * v).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn flat(kappa: f64, xi: f64, level: f64) -> HullWhiteSpec {
        HullWhiteSpec::new(kappa, xi, SpreadCurve::constant(0.0, 20.0, level).unwrap()).unwrap()
    }

    #[test]
    fn spec_validation() {
        let c = SpreadCurve::constant(0.0, 1.0, 0.01).unwrap();
        assert!(HullWhiteSpec::new(0.0, 0.01, c.clone()).is_err());
        assert!(HullWhiteSpec::new(0.1, -0.01, c.clone()).is_err());
        assert!(HullWhiteSpec::with_initial_value(0.1, 0.01, c.clone(), 0.02).is_err());
        assert!(HullWhiteSpec::with_initial_value(0.1, 0.0, c, 0.01).is_ok());
    }

    #[test]
    fn correlation_validation() {
        assert!(CorrelationMatrix::two_spreads(0.5).is_ok());
        assert!(CorrelationMatrix::new(vec![vec![1.0, 1.2], vec![1.2, 1.0]]).is_err());
        assert!(CorrelationMatrix::new(vec![vec![1.0, 0.2], vec![0.3, 1.0]]).is_err());
        // pairwise valid but jointly indefinite
        let bad = vec![
            vec![1.0, 0.9, -0.9],
            vec![0.9, 1.0, 0.9],
            vec![-0.9, 0.9, 1.0],
        ];
        assert!(CorrelationMatrix::new(bad).is_err());
    }

    #[test]
    fn theta_continuous_examples() {
        let s = flat(0.3, 0.01, 0.014);
        assert_abs_diff_eq!(theta_continuous(&s, 4.2).unwrap(), 0.014, epsilon = 1e-16);
        let lin = HullWhiteSpec::new(0.5, 0.01, SpreadCurve::linear(0.0, 10.0, 0.01, 0.03).unwrap())
            .unwrap();
        let b = 0.002;
        assert_abs_diff_eq!(
            theta_continuous(&lin, 3.0).unwrap(),
            0.01 + 3.0 * b + b / 0.5,
            epsilon = 1e-15
        );
        assert!(theta_continuous(&lin, 11.0).is_err());
    }

    /// Integrates `dm/dt = kappa (theta(t) - m)` with RK4 on a fine grid.
    fn ode_mean(spec: &HullWhiteSpec, t_end: f64, steps: usize) -> f64 {
        let h = t_end / steps as f64;
        let th = |t: f64| theta_continuous(spec, t.max(1e-300)).unwrap();
        let f = |t: f64, m: f64| spec.kappa() * (th(t) - m);
        let mut m = spec.initial_value();
        for k in 0..steps {
            let t = k as f64 * h;
            let k1 = f(t + 1e-12, m);
            let k2 = f(t + 0.5 * h, m + 0.5 * h * k1);
            let k3 = f(t + 0.5 * h, m + 0.5 * h * k2);
            let k4 = f(t + h, m + h * k3);
            m += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        m
    }

    #[test]
    fn theta_continuous_at_kink_reproduces_curve() {
        let curve = SpreadCurve::new(vec![0.0, 3.6, 10.0], vec![0.004, 0.002, 0.006]).unwrap();
        let s = HullWhiteSpec::new(0.2, 0.001, curve.clone()).unwrap();
        let left = (0.002 - 0.004) / 3.6;
        assert_abs_diff_eq!(
            theta_continuous(&s, 3.6).unwrap(),
            0.002 + left / 0.2,
            epsilon = 1e-15
        );
        // 3600 steps put a step boundary exactly on the kink
        for t in [3.6, 6.0, 10.0] {
            let steps = (t * 1000.0_f64).round() as usize;
            assert_abs_diff_eq!(ode_mean(&s, t, steps), curve.at(t), epsilon = 1e-10);
        }
    }

    /// Closed-form sum of the OU mean under piecewise theta, independent of
    /// the recursion used by the library.
    fn telescoping_mean(spec: &HullWhiteSpec, grid: &[f64], theta: &[f64], k: usize) -> f64 {
        let kap = spec.kappa();
        let tk = grid[k];
        let mut m = spec.mean_curve().at(grid[0]) * (-kap * (tk - grid[0])).exp();
        for j in 1..=k {
            m += theta[j - 1]
                * ((-kap * (tk - grid[j])).exp() - (-kap * (tk - grid[j - 1])).exp());
        }
        m
    }

    #[test]
    fn theta_piecewise_constant_curve() {
        let s = flat(0.7, 0.01, 0.0123);
        let grid: Vec<f64> = (0..=10).map(|i| i as f64).collect();
        for th in theta_piecewise(&s, &grid).unwrap() {
            assert_abs_diff_eq!(th, 0.0123, epsilon = 1e-15);
        }
    }

    #[test]
    fn theta_piecewise_reproduces_nodes() {
        let s = HullWhiteSpec::new(0.0078, 0.0018, SpreadCurve::linear(0.0, 1.0, 0.014, 0.015).unwrap())
            .unwrap();
        let grid = [0.0, 1.0];
        let th = theta_piecewise(&s, &grid).unwrap();
        assert_eq!(th.len(), 1);
        assert_abs_diff_eq!(telescoping_mean(&s, &grid, &th, 1), 0.015, epsilon = 1e-12);

        let curve = SpreadCurve::new(vec![0.0, 0.5, 2.0], vec![0.01, -0.002, 0.02]).unwrap();
        let s2 = HullWhiteSpec::new(0.9, 0.01, curve).unwrap();
        let grid2 = [0.0, 0.5, 2.0];
        let th2 = theta_piecewise(&s2, &grid2).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(telescoping_mean(&s2, &grid2, &th2, k), s2.mean_curve().at(grid2[k]), epsilon = 1e-12);
        }
        let rec = mean_under_piecewise_theta(&s2, &grid2, &th2);
        for k in 0..3 {
            assert_abs_diff_eq!(rec[k], s2.mean_curve().at(grid2[k]), epsilon = 1e-12);
        }
    }

    #[test]
    fn theta_piecewise_converges_to_continuous() {
        let curve = SpreadCurve::new(vec![0.0, 4.0, 10.0], vec![0.01, 0.02, 0.015]).unwrap();
        let s = HullWhiteSpec::new(0.4, 0.01, curve).unwrap();
        // compare on the smooth segment (0, 4]
        let sup = |n: usize| {
            let grid: Vec<f64> = (0..=n).map(|i| 4.0 * i as f64 / n as f64).collect();
            let th = theta_piecewise(&s, &grid).unwrap();
            grid.windows(2)
                .zip(&th)
                .map(|(w, t)| (t - theta_continuous(&s, w[1]).unwrap()).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (sup(20), sup(40));
        let ratio = e1 / e2;
        assert!((1.8..2.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn theta_piecewise_tiny_kappa_uses_limit() {
        let s = HullWhiteSpec::new(1e-16, 0.0, SpreadCurve::linear(0.0, 1.0, 0.01, 0.01).unwrap())
            .unwrap();
        let th = theta_piecewise(&s, &[0.0, 0.5, 1.0]).unwrap();
        assert_abs_diff_eq!(th[0], 0.01, epsilon = 1e-15);
    }

    #[test]
    fn cross_covariance_examples() {
        let a = flat(0.0078, 0.0018, 0.0);
        assert_eq!(spread_cross_covariance(&a, &a, 1.0, 0.0, 0.0, 0.0), 0.0);
        let t: f64 = 7.0;
        let k: f64 = 0.0078;
        let exact = 0.0018f64.powi(2) * (1.0 - (-2.0 * k * t).exp()) / (2.0 * k);
        assert_relative_eq!(
            spread_cross_covariance(&a, &a, 1.0, 0.0, t, t),
            exact,
            max_relative = 1e-13
        );
        let b = flat(0.3, 0.0023, 0.0);
        assert_relative_eq!(
            spread_cross_covariance(&a, &b, 0.5, 0.0, 3.0, 8.0),
            spread_cross_covariance(&b, &a, 0.5, 0.0, 8.0, 3.0),
            max_relative = 1e-14
        );
    }

    /// Gauss-Legendre double integral of the pointwise covariance, split on
    /// the diagonal where the integrand has a kink.
    fn quadrature_integral_cov(a: &HullWhiteSpec, b: &HullWhiteSpec, rho: f64, tau: f64) -> f64 {
        let rule = crate::numerics::legendre(40);
        let inner = |u: f64| {
            rule.integrate(0.0, u, |v| spread_cross_covariance(a, b, rho, 0.0, u, v))
                + rule.integrate(u, tau, |v| spread_cross_covariance(a, b, rho, 0.0, u, v))
        };
        rule.integrate(0.0, tau, inner)
    }

    #[test]
    fn integral_covariance_matches_quadrature() {
        let a = flat(0.0078, 0.0018, 0.0);
        let b = flat(0.0076, 0.0023, 0.0);
        let c = flat(1.0, 0.01, 0.0);
        for (x, y, rho) in [(&a, &a, 1.0), (&a, &b, 0.5), (&b, &c, -0.3), (&c, &c, 1.0)] {
            let q = quadrature_integral_cov(x, y, rho, 10.0);
            let f = integral_covariance(x, y, rho, 0.0, 10.0);
            assert_relative_eq!(f, q, max_relative = 1e-10);
        }
        assert_eq!(integral_covariance(&a, &b, 0.0, 0.0, 10.0), 0.0);
    }

    #[test]
    fn integral_kernel_series_branch_is_continuous() {
        for (a, b) in [(1e-5, 2e-5), (1e-4, 1e-4)] {
            let tau = 9.0;
            let series = integrated_ou_kernel(a, b, tau);
            let bf = |k: f64| tau * one_minus_exp_over(k * tau);
            let direct = (tau - bf(a) - bf(b) + bf(a + b)) / (a * b);
            assert_relative_eq!(series, direct, max_relative = 1e-6);
        }
    }

    #[test]
    fn bond_moment_examples() {
        let det = flat(0.1, 0.0, 0.014);
        assert_relative_eq!(
            bond_moment(&det, 0.0, 10.0, 1).unwrap(),
            (-0.14f64).exp(),
            max_relative = 1e-15
        );
        let zero = flat(0.1, 0.0, 0.0);
        assert_eq!(bond_moment(&zero, 0.0, 10.0, 2).unwrap(), 1.0);
        assert!(bond_moment(&det, 0.0, 10.0, 3).is_err());
    }

    #[test]
    fn bond_moment_monotonicity() {
        let s = flat(0.05, 0.004, 0.01);
        let base = bond_moment(&s, 0.0, 10.0, 1).unwrap();
        let up = HullWhiteSpec::new(0.05, 0.004, s.mean_curve().shifted(0.001)).unwrap();
        assert!(bond_moment(&up, 0.0, 10.0, 1).unwrap() < base);
        let vol = s.with_xi(0.006).unwrap();
        assert!(bond_moment(&vol, 0.0, 10.0, 1).unwrap() > base);
    }

    #[test]
    fn joint_moment_consistency() {
        let a = flat(0.0078, 0.0018, 0.01);
        let b = flat(0.0076, 0.0023, 0.007);
        assert_relative_eq!(
            joint_bond_moment(&a, &a, 1.0, 0.0, 10.0).unwrap(),
            bond_moment(&a, 0.0, 10.0, 2).unwrap(),
            max_relative = 1e-12
        );
        assert_relative_eq!(
            joint_bond_moment(&a, &b, 0.3, 0.0, 10.0).unwrap(),
            joint_bond_moment(&b, &a, 0.3, 0.0, 10.0).unwrap(),
            max_relative = 1e-15
        );
        let a0 = a.with_xi(0.0).unwrap();
        let b0 = b.with_xi(0.0).unwrap();
        assert_relative_eq!(
            joint_bond_moment(&a0, &b0, 0.3, 0.0, 10.0).unwrap(),
            (-0.17f64).exp(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn level_integral_covariance_integrates_to_integral_covariance() {
        let a = flat(0.3, 0.01, 0.0);
        let b = flat(0.05, 0.02, 0.0);
        let rule = crate::numerics::legendre(64);
        let total = rule.integrate(1.0, 9.0, |s| level_integral_covariance(&a, &b, 0.4, 1.0, s, 9.0));
        assert_relative_eq!(total, integral_covariance(&a, &b, 0.4, 1.0, 9.0), max_relative = 1e-10);
        assert_eq!(level_integral_covariance(&a, &b, 0.4, 1.0, 1.0, 9.0), 0.0);
        // at s = T only the part before s remains: int_{t0}^{T} Cov[q_a(T), q_b(v)] dv
        let direct = rule.integrate(1.0, 9.0, |v| spread_cross_covariance(&a, &b, 0.4, 1.0, 9.0, v));
        assert_relative_eq!(level_integral_covariance(&a, &b, 0.4, 1.0, 9.0, 9.0), direct, max_relative = 1e-12);
    }

    #[test]
    fn moments_invariant_under_time_translation() {
        let curve = SpreadCurve::new(vec![0.0, 4.0, 10.0], vec![0.01, 0.02, 0.015]).unwrap();
        let a = HullWhiteSpec::new(0.2, 0.003, curve.clone()).unwrap();
        let b = HullWhiteSpec::new(0.05, 0.002, curve.shifted(-0.004)).unwrap();
        let c = 2.5;
        let at = HullWhiteSpec::new(0.2, 0.003, curve.time_translated(c)).unwrap();
        let bt = HullWhiteSpec::new(0.05, 0.002, curve.shifted(-0.004).time_translated(c)).unwrap();
        assert_relative_eq!(
            joint_bond_moment(&a, &b, 0.4, 1.0, 9.0).unwrap(),
            joint_bond_moment(&at, &bt, 0.4, 1.0 + c, 9.0 + c).unwrap(),
            max_relative = 1e-13
        );
        assert_relative_eq!(
            spread_cross_covariance(&a, &b, 0.4, 1.0, 3.0, 5.0),
            spread_cross_covariance(&at, &bt, 0.4, 1.0 + c, 3.0 + c, 5.0 + c),
            max_relative = 1e-13
        );
    }
}
