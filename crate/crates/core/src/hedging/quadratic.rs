//! Variance of the static hedge as a quadratic form in the bond weights, and
//! its box-constrained minimiser.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::ctd_engine::{ctd_common_factor, shifted_max_ctd, CfSettings};
use crate::error::{CtdError, Result};
use crate::instruments::zcb_foreign;
use crate::spread_model::{bond_moment, joint_bond_moment, MarketModel};

/// Relative size of `Q[0][0]` below which the domestic weight is undetermined.
pub const DEGENERACY_TOLERANCE: f64 = 1e-14;

/// Relative size of a negative eigenvalue of `Q` beyond which the clip is
/// reported as a genuine loss of definiteness.
pub const PSD_CLIP: f64 = 1e-12;

/// Largest problem solved by enumerating active sets.
const MAX_ENUMERATED: usize = 6;

/// `f(alpha) = alpha' Q alpha + 2 b' alpha`, plus the informational
/// constant `Var[P^c]` when it has been estimated.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub q: DMatrix<f64>,
    pub b: DVector<f64>,
    pub constant: Option<f64>,
    /// Time-`t0` prices `Q_0..Q_N` of the hedge bonds.
    pub bond_prices: Vec<f64>,
    /// Time-`t0` price of the collateral-choice bond.
    pub collateral_price: f64,
    /// Most negative eigenvalue removed by the PSD clip.
    pub clipped_eigenvalue: f64,
}

impl QuadraticForm {
    /// Whether the clipped eigenvalue exceeds rounding level.
    pub fn clip_significant(&self) -> bool {
        let max = (0..self.dim()).map(|i| self.q[(i, i)]).fold(0.0, f64::max);
        -self.clipped_eigenvalue > PSD_CLIP * max
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, alpha: &[f64]) -> f64 {
        let a = DVector::from_column_slice(alpha);
        (a.transpose() * &self.q * &a)[(0, 0)] + 2.0 * self.b.dot(&a)
    }

    /// `Var[pi(alpha)]` when the constant is known.
    pub fn variance(&self, alpha: &[f64]) -> Option<f64> {
        self.constant.map(|c| (c + self.objective(alpha)).max(0.0))
    }

    pub fn with_constant(mut self, var_pc: f64) -> Self {
        self.constant = Some(var_pc);
        self
    }

    /// Whether the domestic weight has no effect on the variance.
    pub fn alpha0_degenerate(&self) -> bool {
        let max_diag = (0..self.dim()).map(|i| self.q[(i, i)].abs()).fold(0.0, f64::max);
        self.q[(0, 0)].abs() <= DEGENERACY_TOLERANCE * max_diag || max_diag == 0.0
    }
}

/// Builds the covariance matrix of `(Q_0, ..., Q_N)` and their covariances with
/// the collateral-choice bond payoff, assuming spreads independent of `r_0`.
pub fn assemble_quadratic(model: &MarketModel, t0: f64, t_end: f64, settings: CfSettings) -> Result<QuadraticForm> {
    model.check_horizon(t0, t_end)?;
    let n = model.n_spreads();
    let dom = &model.domestic;
    let p1 = bond_moment(dom, t0, t_end, 1)?;
    let p2 = bond_moment(dom, t0, t_end, 2)?;
    // spread-only first moments, index 0 is the zero spread
    let mut s1 = vec![1.0; n + 1];
    for i in 1..=n {
        s1[i] = bond_moment(&model.spreads[i - 1], t0, t_end, 1)?;
    }
    let mut q = DMatrix::zeros(n + 1, n + 1);
    for i in 0..=n {
        for j in 0..=i {
            let s2 = match (i, j) {
                (0, 0) => 1.0,
                (i, 0) | (0, i) => s1[i],
                (i, j) if i == j => bond_moment(&model.spreads[i - 1], t0, t_end, 2)?,
                (i, j) => joint_bond_moment(
                    &model.spreads[i - 1],
                    &model.spreads[j - 1],
                    model.spread_rho(i, j),
                    t0,
                    t_end,
                )?,
            };
            let c = s2 * p2 - s1[i] * s1[j] * p1 * p1;
            q[(i, j)] = c;
            q[(j, i)] = c;
        }
    }
    let ctd = ctd_common_factor(model, t0, t_end, settings)?;
    let mut b = DVector::zeros(n + 1);
    b[0] = ctd * (p2 - p1 * p1);
    for i in 1..=n {
        let shifted = shifted_max_ctd(model, i, t0, t_end, settings).map_err(|e| {
            CtdError::numerical(format!("shifted common-factor price for pivot {i} failed: {e}"))
        })?;
        b[i] = shifted * p2 - ctd * s1[i] * p1 * p1;
    }
    if b.iter().any(|x| !x.is_finite()) {
        return Err(CtdError::numerical("covariance vector is not finite"));
    }
    let (q, clipped) = clip_psd(q);
    let bond_prices = (0..=n)
        .map(|i| zcb_foreign(model, i, t0, t_end))
        .collect::<Result<Vec<_>>>()?;
    Ok(QuadraticForm {
        q,
        b,
        constant: None,
        bond_prices,
        collateral_price: ctd * p1,
        clipped_eigenvalue: clipped,
    })
}

fn clip_psd(q: DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let eig = SymmetricEigen::new(q.clone());
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return (q, 0.0);
    }
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    let sym = (&out + out.transpose()) * 0.5;
    (sym, min)
}

/// Choice of the domestic weight when it does not affect the variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alpha0Policy {
    /// Left to the optimiser; zero when undetermined.
    Free,
    Zero,
    /// Makes the hedge legs (without cash) worth zero at inception.
    CashNeutral,
}

impl Alpha0Policy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "free" => Ok(Self::Free),
            "zero" => Ok(Self::Zero),
            "cash_neutral" => Ok(Self::CashNeutral),
            _ => Err(CtdError::validation(format!(
                "unknown alpha0 policy '{s}' (expected free, zero or cash_neutral)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Free => "free",
            Self::Zero => "zero",
            Self::CashNeutral => "cash_neutral",
        }
    }
}

/// Solution of the box-constrained minimisation.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgeWeights {
    pub alpha: Vec<f64>,
    pub alpha0_policy: Alpha0Policy,
    pub alpha0_degenerate: bool,
    /// `f(alpha)`.
    pub objective: f64,
    /// `Var[pi(alpha)]` when the form carries `Var[P^c]`.
    pub predicted_variance: Option<f64>,
    /// Whether the unconstrained minimiser already lies inside the box.
    pub interior: bool,
}

/// Minimises `f` over `[-bound, bound]^{N+1}`; a degenerate domestic weight is
/// set by `policy`.
pub fn solve_min_variance(form: &QuadraticForm, policy: Alpha0Policy, bound: f64) -> Result<HedgeWeights> {
    if !(bound > 0.0) {
        return Err(CtdError::validation("weight bound must be positive"));
    }
    let n = form.dim();
    let degenerate = form.alpha0_degenerate();
    let vars: Vec<usize> = if degenerate { (1..n).collect() } else { (0..n).collect() };
    let sub_q = DMatrix::from_fn(vars.len(), vars.len(), |a, c| form.q[(vars[a], vars[c])]);
    let sub_b = DVector::from_fn(vars.len(), |a, _| form.b[vars[a]]);
    let (sub_alpha, interior) = minimise_box(&sub_q, &sub_b, bound)?;
    let mut alpha = vec![0.0; n];
    for (a, &v) in vars.iter().enumerate() {
        alpha[v] = sub_alpha[a];
    }
    if degenerate && policy == Alpha0Policy::CashNeutral {
        let legs: f64 = (1..n).map(|i| alpha[i] * form.bond_prices[i]).sum();
        alpha[0] = (-(form.collateral_price + legs) / form.bond_prices[0]).clamp(-bound, bound);
    }
    let objective = form.objective(&alpha);
    Ok(HedgeWeights {
        predicted_variance: form.variance(&alpha),
        alpha,
        alpha0_policy: policy,
        alpha0_degenerate: degenerate,
        objective,
        interior,
    })
}

/// Gradient of `f` at `alpha`.
pub fn gradient(form: &QuadraticForm, alpha: &[f64]) -> Vec<f64> {
    let a = DVector::from_column_slice(alpha);
    ((&form.q * a + &form.b) * 2.0).iter().copied().collect()
}

/// Largest violation of the box KKT conditions, scaled by the gradient size.
pub fn kkt_violation(form: &QuadraticForm, alpha: &[f64], bound: f64) -> f64 {
    let g = gradient(form, alpha);
    let scale = g.iter().fold(form.b.amax() * 2.0, |m, x| m.max(x.abs())).max(1e-300);
    let tol = 1e-12 * bound;
    g.iter()
        .zip(alpha)
        .map(|(&gi, &ai)| {
            if ai <= -bound + tol {
                (-gi).max(0.0)
            } else if ai >= bound - tol {
                gi.max(0.0)
            } else {
                gi.abs()
            }
        })
        .fold(0.0, f64::max)
        / scale
}

fn solve_free(q: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if q.nrows() == 0 {
        return Some(DVector::zeros(0));
    }
    let svd = q.clone().svd(true, true);
    let tol = 1e-13 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    svd.solve(rhs, tol).ok()
}

/// Returns the minimiser and whether it is unconstrained.
fn minimise_box(q: &DMatrix<f64>, b: &DVector<f64>, bound: f64) -> Result<(Vec<f64>, bool)> {
    let n = b.len();
    if n == 0 {
        return Ok((Vec::new(), true));
    }
    let f = |x: &DVector<f64>| (x.transpose() * q * x)[(0, 0)] + 2.0 * b.dot(x);
    let unconstrained = solve_free(q, &-b);
    if let Some(x) = &unconstrained {
        let residual = (q * x + b).amax();
        let scale = b.amax().max(q.amax() * x.amax()).max(1e-300);
        if x.iter().all(|v| v.abs() <= bound) && residual <= 1e-9 * scale {
            return Ok((x.iter().copied().collect(), true));
        }
    }
    if n > MAX_ENUMERATED {
        return Ok((projected_gradient(q, b, bound), false));
    }
    // every variable is at -bound, at +bound or free
    let mut best: Option<(f64, DVector<f64>)> = None;
    let patterns = 3usize.pow(n as u32);
    for code in 0..patterns {
        let mut state = vec![0u8; n];
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 0).collect();
        let mut x = DVector::from_fn(n, |i, _| match state[i] {
            1 => -bound,
            2 => bound,
            _ => 0.0,
        });
        if !free.is_empty() {
            let qff = DMatrix::from_fn(free.len(), free.len(), |a, c| q[(free[a], free[c])]);
            let rhs = DVector::from_fn(free.len(), |a, _| {
                let i = free[a];
                -b[i] - (0..n).filter(|&j| state[j] != 0).map(|j| q[(i, j)] * x[j]).sum::<f64>()
            });
            let Some(sol) = solve_free(&qff, &rhs) else { continue };
            for (a, &i) in free.iter().enumerate() {
                x[i] = sol[a];
            }
            if free.iter().any(|&i| x[i].abs() > bound * (1.0 + 1e-12)) {
                continue;
            }
        }
        let val = f(&x);
        if best.as_ref().is_none_or(|(v, _)| val < *v) {
            best = Some((val, x));
        }
    }
    let (_, x) = best.ok_or_else(|| CtdError::numerical("no feasible active set found"))?;
    Ok((x.iter().map(|v| v.clamp(-bound, bound)).collect(), false))
}

fn projected_gradient(q: &DMatrix<f64>, b: &DVector<f64>, bound: f64) -> Vec<f64> {
    let lmax = SymmetricEigen::new(q.clone()).eigenvalues.max().max(1e-300);
    let step = 0.5 / lmax;
    let mut x = DVector::zeros(b.len());
    for _ in 0..200_000 {
        let g = (q * &x + b) * 2.0;
        let next = (&x - g * step).map(|v| v.clamp(-bound, bound));
        let moved = (&next - &x).amax();
        x = next;
        if moved < 1e-15 {
            break;
        }
    }
    x.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn form(q: DMatrix<f64>, b: DVector<f64>) -> QuadraticForm {
        let n = b.len();
        QuadraticForm {
            q,
            b,
            constant: None,
            bond_prices: vec![1.0; n],
            collateral_price: 0.95,
            clipped_eigenvalue: 0.0,
        }
    }

    #[test]
    fn identity_with_zero_b() {
        let f = form(DMatrix::identity(3, 3) * 2.0, DVector::zeros(3));
        let w = solve_min_variance(&f, Alpha0Policy::Free, 1.0).unwrap();
        assert_eq!(w.alpha, vec![0.0, 0.0, 0.0]);
        assert!(w.interior);
    }

    #[test]
    fn box_binds() {
        let f = form(DMatrix::identity(2, 2), DVector::from_vec(vec![-3.0, 0.5]));
        let w = solve_min_variance(&f, Alpha0Policy::Free, 1.0).unwrap();
        assert_eq!(w.alpha[0], 1.0);
        assert!((w.alpha[1] + 0.5).abs() < 1e-14);
        assert!(!w.interior);
        assert!(kkt_violation(&f, &w.alpha, 1.0) < 1e-12);
    }

    #[test]
    fn enumeration_matches_projected_gradient() {
        let m = DMatrix::from_row_slice(4, 4, &[
            4.0, 1.0, 0.5, 0.2, 1.0, 3.0, 0.3, 0.1, 0.5, 0.3, 2.0, 0.4, 0.2, 0.1, 0.4, 1.0,
        ]);
        let b = DVector::from_vec(vec![-5.0, 2.0, -0.3, 1.5]);
        let (x, _) = minimise_box(&m, &b, 1.0).unwrap();
        let y = projected_gradient(&m, &b, 1.0);
        for (a, c) in x.iter().zip(&y) {
            assert!((a - c).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_domestic_weight() {
        let mut q = DMatrix::zeros(3, 3);
        q[(1, 1)] = 2.0;
        q[(2, 2)] = 1.0;
        q[(1, 2)] = 0.5;
        q[(2, 1)] = 0.5;
        let f = form(q, DVector::from_vec(vec![0.0, -0.6, -0.2]));
        assert!(f.alpha0_degenerate());
        let z = solve_min_variance(&f, Alpha0Policy::Zero, 2.0).unwrap();
        assert_eq!(z.alpha[0], 0.0);
        let c = solve_min_variance(&f, Alpha0Policy::CashNeutral, 2.0).unwrap();
        let legs: f64 = c.alpha.iter().sum();
        assert!((legs + 0.95).abs() < 1e-14);
        assert_eq!(z.alpha[1..], c.alpha[1..]);
        assert!((z.objective - c.objective).abs() < 1e-15);
    }

    #[test]
    fn clip_removes_tiny_negative_eigenvalues() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 - 1e-15]);
        let (c, min) = clip_psd(q);
        assert!(min < 0.0);
        assert!(SymmetricEigen::new(c).eigenvalues.min() > -1e-15);
    }
}
