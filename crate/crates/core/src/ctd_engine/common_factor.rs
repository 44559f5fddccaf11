//! Common-factor representation of a Gaussian vector and the distribution of
//! its (optionally floored) maximum.
//!
//! `X_i = C + A_i` with `C ~ N(0, gamma * s_min^2)` shared and the `A_i`
//! independent. Conditional on `Y = max_i A_i` the moments of `max(0, C + Y)`
//! are closed form, so each moment is a one-dimensional integral against the
//! law of `Y`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{CtdError, Result};
use crate::numerics::{legendre16, norm_cdf, norm_pdf, LegendreRule};

/// Largest admissible common-factor weight.
pub const GAMMA_MAX: f64 = 1.0 - 1e-9;

/// Means and covariance of a Gaussian vector at a fixed time.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianVectorSnapshot {
    pub time: f64,
    pub means: Vec<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianVectorSnapshot {
    pub fn new(time: f64, means: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = means.len();
        if n == 0 || covariance.nrows() != n || covariance.ncols() != n {
            return Err(CtdError::validation(format!(
                "snapshot has {n} means but a {}x{} covariance",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        Ok(Self {
            time,
            means,
            covariance,
        })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.covariance[(i, i)]
    }

    fn check_psd(&self) -> Result<()> {
        let n = self.dim();
        let scale = (0..n).map(|i| self.variance(i).abs()).fold(0.0, f64::max);
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (self.covariance[(i, j)], self.covariance[(j, i)]);
                if (a - b).abs() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
                    return Err(CtdError::validation("snapshot covariance not symmetric"));
                }
            }
        }
        if n == 1 {
            return if self.variance(0) >= 0.0 {
                Ok(())
            } else {
                Err(CtdError::validation("negative variance in snapshot"))
            };
        }
        let min_eig = SymmetricEigen::new(self.covariance.clone()).eigenvalues.min();
        if min_eig < -1e-10 * scale {
            return Err(CtdError::validation(format!(
                "snapshot covariance not positive semidefinite (smallest eigenvalue {min_eig:.3e})"
            )));
        }
        Ok(())
    }
}

/// Outcome of fitting the common-factor weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaFit {
    pub gamma: f64,
    /// True when the unconstrained optimum fell outside `[0, GAMMA_MAX]`.
    pub clamped: bool,
    /// Largest absolute off-diagonal covariance error after fitting.
    pub max_residual: f64,
}

/// Common-factor weight minimising the Frobenius distance between the
/// implied covariance (`gamma * s_min^2` off the diagonal) and the snapshot.
///
/// The objective is quadratic in `gamma`, so the minimiser is the mean
/// off-diagonal covariance over `s_min^2`, clamped to `[0, GAMMA_MAX]`.
pub fn fit_gamma(snapshot: &GaussianVectorSnapshot) -> Result<f64> {
    fit_gamma_detailed(snapshot).map(|f| f.gamma)
}

pub fn fit_gamma_detailed(snapshot: &GaussianVectorSnapshot) -> Result<GammaFit> {
    snapshot.check_psd()?;
    let n = snapshot.dim();
    let s_min = (0..n).map(|i| snapshot.variance(i)).fold(f64::INFINITY, f64::min);
    let off = |i: usize, j: usize| snapshot.covariance[(i, j)];
    let max_off = || {
        let mut m: f64 = 0.0;
        for i in 0..n {
            for j in 0..i {
                m = m.max(off(i, j).abs());
            }
        }
        m
    };
    if n == 1 || s_min <= 0.0 {
        return Ok(GammaFit {
            gamma: 0.0,
            clamped: false,
            max_residual: max_off(),
        });
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..i {
            sum += off(i, j);
        }
    }
    let raw = sum / pairs / s_min;
    let gamma = raw.clamp(0.0, GAMMA_MAX);
    let implied = gamma * s_min;
    let mut resid: f64 = 0.0;
    for i in 0..n {
        for j in 0..i {
            resid = resid.max((off(i, j) - implied).abs());
        }
    }
    Ok(GammaFit {
        gamma,
        clamped: gamma != raw,
        max_residual: resid,
    })
}

/// Common-factor decomposition of a snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct CommonFactorState {
    pub time: f64,
    pub gamma: f64,
    pub sigma_min_sq: f64,
    pub component_means: Vec<f64>,
    pub component_vars: Vec<f64>,
    pub common_var: f64,
    /// Whether the maximum includes the constant 0.
    pub floor_at_zero: bool,
    pub fit: GammaFit,
}

impl CommonFactorState {
    pub fn from_snapshot(snapshot: &GaussianVectorSnapshot, floor_at_zero: bool) -> Result<Self> {
        let fit = fit_gamma_detailed(snapshot)?;
        let n = snapshot.dim();
        let vars: Vec<f64> = (0..n).map(|i| snapshot.variance(i).max(0.0)).collect();
        let sigma_min_sq = vars.iter().copied().fold(f64::INFINITY, f64::min);
        let common_var = fit.gamma * sigma_min_sq;
        let component_vars = vars.iter().map(|v| (v - common_var).max(0.0)).collect();
        Ok(Self {
            time: snapshot.time,
            gamma: fit.gamma,
            sigma_min_sq,
            component_means: snapshot.means.clone(),
            component_vars,
            common_var,
            floor_at_zero,
            fit,
        })
    }

    /// Builds a state directly from its parts; used by tests and oracles.
    pub fn from_parts(
        means: Vec<f64>,
        component_vars: Vec<f64>,
        common_var: f64,
        floor_at_zero: bool,
    ) -> Result<Self> {
        if means.len() != component_vars.len() || means.is_empty() {
            return Err(CtdError::validation("state means and variances differ in length"));
        }
        if common_var < 0.0 || component_vars.iter().any(|v| *v < 0.0) {
            return Err(CtdError::validation("state variances must be non-negative"));
        }
        let sigma_min_sq = component_vars
            .iter()
            .map(|v| v + common_var)
            .fold(f64::INFINITY, f64::min);
        let gamma = if sigma_min_sq > 0.0 {
            common_var / sigma_min_sq
        } else {
            0.0
        };
        Ok(Self {
            time: 0.0,
            gamma,
            sigma_min_sq,
            component_means: means,
            component_vars,
            common_var,
            floor_at_zero,
            fit: GammaFit {
                gamma,
                clamped: false,
                max_residual: 0.0,
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.component_means.len()
    }

    /// Marginal variance of component `i` implied by the decomposition.
    pub fn marginal_variance(&self, i: usize) -> f64 {
        self.common_var + self.component_vars[i]
    }
}

fn legendre128() -> &'static LegendreRule {
    static RULE: OnceLock<LegendreRule> = OnceLock::new();
    RULE.get_or_init(|| LegendreRule::new(128))
}

/// `P(A_i <= x)` with point masses for degenerate components.
#[inline]
fn component_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    if sd > 0.0 {
        norm_cdf((x - mean) / sd)
    } else if x >= mean {
        1.0
    } else {
        0.0
    }
}

/// Distribution function of the common-factor maximum.
///
/// The floored maximum has an atom at 0, so `F(x) = 0` for `x < 0` and the
/// convolution applies from `x = 0` on.
pub fn max_cdf(state: &CommonFactorState, x: f64) -> f64 {
    if state.floor_at_zero && x < 0.0 {
        return 0.0;
    }
    let prod = |y: f64| -> f64 {
        state
            .component_means
            .iter()
            .zip(&state.component_vars)
            .map(|(m, v)| component_cdf(y, *m, v.sqrt()))
            .product()
    };
    let sc = state.common_var.sqrt();
    if sc == 0.0 {
        return prod(x);
    }
    // integrate over z = C / sc
    legendre128().integrate(-8.0, 8.0, |z| norm_pdf(z) * prod(x - sc * z))
}

/// `E[g(Y + C)]` moments given `Y = y`: first and second moment of the
/// (floored) maximum.
#[inline]
fn conditional_moments(y: f64, common_var: f64, sc: f64, floor: bool) -> (f64, f64) {
    if !floor {
        return (y, y * y + common_var);
    }
    if sc == 0.0 {
        let h = y.max(0.0);
        return (h, h * h);
    }
    let z = y / sc;
    let p = norm_cdf(z);
    let d = norm_pdf(z);
    (y * p + sc * d, (y * y + common_var) * p + y * sc * d)
}

const U_MAX: f64 = 9.0;
const BASE_BREAKS: [f64; 7] = [-9.0, -6.0, -3.0, 0.0, 3.0, 6.0, 9.0];

fn push_transition(points: &mut Vec<f64>, centre: f64, width: f64) {
    points.push(centre);
    if width < 1.0 {
        for k in [-5.0, -2.0, 2.0, 5.0] {
            points.push(centre + k * width);
        }
    }
}

/// First and second moment of the maximum, `(E[M], E[M^2])`.
pub fn max_raw_moments(state: &CommonFactorState) -> (f64, f64) {
    let n = state.dim();
    let floor = state.floor_at_zero;
    let c = state.common_var;
    let sc = c.sqrt();
    let sd: Vec<f64> = state.component_vars.iter().map(|v| v.sqrt()).collect();
    let m = &state.component_means;

    // largest degenerate mean: Y has an atom there
    let atom = (0..n)
        .filter(|&k| sd[k] == 0.0)
        .map(|k| m[k])
        .fold(f64::NEG_INFINITY, f64::max);

    let mut e1 = 0.0;
    let mut e2 = 0.0;
    if atom.is_finite() {
        let w: f64 = (0..n)
            .filter(|&k| sd[k] > 0.0)
            .map(|k| norm_cdf((atom - m[k]) / sd[k]))
            .product();
        let (h1, h2) = conditional_moments(atom, c, sc, floor);
        e1 += w * h1;
        e2 += w * h2;
    }

    let rule = legendre16();
    let mut points = Vec::with_capacity(32);
    for k in (0..n).filter(|&k| sd[k] > 0.0) {
        let lo = if atom.is_finite() {
            ((atom - m[k]) / sd[k]).max(-U_MAX)
        } else {
            -U_MAX
        };
        if lo >= U_MAX {
            continue;
        }
        points.clear();
        points.extend_from_slice(&BASE_BREAKS);
        for j in (0..n).filter(|&j| j != k && sd[j] > 0.0) {
            push_transition(&mut points, (m[j] - m[k]) / sd[k], sd[j] / sd[k]);
        }
        if floor {
            push_transition(&mut points, -m[k] / sd[k], sc / sd[k]);
        }
        points.retain(|&u| u > lo && u < U_MAX);
        points.push(lo);
        points.push(U_MAX);
        points.sort_by(f64::total_cmp);
        points.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

        let integrand = |u: f64| -> (f64, f64) {
            let y = m[k] + sd[k] * u;
            let mut w = norm_pdf(u);
            for j in 0..n {
                if j != k && sd[j] > 0.0 {
                    w *= norm_cdf((y - m[j]) / sd[j]);
                }
            }
            if w == 0.0 {
                return (0.0, 0.0);
            }
            let (h1, h2) = conditional_moments(y, c, sc, floor);
            (w * h1, w * h2)
        };
        for seg in points.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for (x, wt) in rule.nodes.iter().zip(&rule.weights) {
                let (f1, f2) = integrand(mid + half * x);
                s1 += wt * f1;
                s2 += wt * f2;
            }
            e1 += s1 * half;
            e2 += s2 * half;
        }
    }
    (e1, e2)
}

/// Mean and variance of the maximum.
pub fn max_moments(state: &CommonFactorState) -> Result<(f64, f64)> {
    let (e1, e2) = max_raw_moments(state);
    if !(e1.is_finite() && e2.is_finite()) {
        return Err(CtdError::numerical(format!(
            "maximum moments not finite at t = {} (means {:?}, vars {:?}, common {})",
            state.time, state.component_means, state.component_vars, state.common_var
        )));
    }
    Ok((e1, (e2 - e1 * e1).max(0.0)))
}

/// Mean and variance from `int (1 - F)` and `int 2x (1 - F)` with the
/// convolution cdf. Much slower than [`max_moments`]; kept as a check.
pub fn max_moments_by_convolution(state: &CommonFactorState) -> (f64, f64) {
    let sig_max = state
        .component_vars
        .iter()
        .map(|v| (v + state.common_var).sqrt())
        .fold(0.0, f64::max);
    let mu_max = state.component_means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mu_min = state.component_means.iter().copied().fold(f64::INFINITY, f64::min);
    let upper = (mu_max + 10.0 * sig_max).max(if state.floor_at_zero { 0.0 } else { f64::NEG_INFINITY });
    let rule = legendre16();
    let panels = 200;
    let integrate = |a: f64, b: f64, f: &dyn Fn(f64) -> f64| -> f64 {
        if b <= a {
            return 0.0;
        }
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|p| rule.integrate(a + p as f64 * h, a + (p + 1) as f64 * h, f))
            .sum()
    };
    // E[M] = int_0^inf (1-F) - int_-inf^0 F, E[M^2] = int_0^inf 2x(1-F) + int_-inf^0 2|x| F
    let surv = |x: f64| 1.0 - max_cdf(state, x);
    let pos1 = integrate(0.0, upper.max(0.0), &surv);
    let pos2 = integrate(0.0, upper.max(0.0), &|x| 2.0 * x * surv(x));
    let (neg1, neg2) = if state.floor_at_zero {
        (0.0, 0.0)
    } else {
        let lower = (mu_min - 10.0 * sig_max).min(0.0);
        (
            integrate(lower, 0.0, &|x| max_cdf(state, x)),
            integrate(lower, 0.0, &|x| -2.0 * x * max_cdf(state, x)),
        )
    };
    let mean = pos1 - neg1;
    let second = pos2 + neg2;
    (mean, (second - mean * mean).max(0.0))
}
