//! CTD discount factors on a time grid.
//!
//! `int E[M]` is split into the exact integral of the maximum of the
//! node-interpolated means plus a trapezoid over the convexity correction
//! `E[M] - max(means)`. With zero volatility the correction vanishes and the
//! deterministic closed form is recovered exactly.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::common_factor::{max_moments, CommonFactorState, GaussianVectorSnapshot};
use crate::curve::TIME_EPS;
use crate::error::{CtdError, Result};
use crate::spread_model::{bond_moment, level_integral_covariance, spread_cross_covariance, MarketModel};

/// Grid settings for the common-factor pricer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfSettings {
    pub nodes_per_year: usize,
}

impl Default for CfSettings {
    fn default() -> Self {
        Self { nodes_per_year: 48 }
    }
}

/// Per-run diagnostics of the common-factor pricer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CfDiagnostics {
    pub nodes: usize,
    pub gamma_min: f64,
    pub gamma_max: f64,
    /// Nodes where the fitted weight hit a bound (e.g. negative covariance).
    pub gamma_clamped_nodes: usize,
    /// Largest off-diagonal covariance error of the factor fit.
    pub max_cov_residual: f64,
    pub mean_integral: f64,
    pub psi: f64,
}

/// A priced maturity together with the pieces of the approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct CfQuote {
    pub maturity: f64,
    pub value: f64,
    pub mean_integral: f64,
    pub psi: f64,
}

/// Per-node moments of the maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxMoments {
    pub times: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

/// Gaussian family whose maximum is priced.
///
/// `anchor` is the time from which covariances accumulate; `displacement`
/// shifts each spread's mean by `u_i e^{-kappa_i (s - anchor)}`. A tilt by
/// `exp(-int_{anchor}^{H} q_p)` moves each mean by `-Cov[q_k(s), int q_p]`.
#[derive(Debug, Clone, Copy)]
pub struct Family<'a> {
    pub model: &'a MarketModel,
    pub anchor: f64,
    pub displacement: Option<&'a [f64]>,
    pub tilt: Option<Tilt>,
}

/// Exponential change of measure by `exp(-int_{anchor}^{horizon} q_index)`,
/// `index` counted from 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tilt {
    pub index: usize,
    pub horizon: f64,
}

impl<'a> Family<'a> {
    pub fn standard(model: &'a MarketModel, anchor: f64) -> Self {
        Self {
            model,
            anchor,
            displacement: None,
            tilt: None,
        }
    }

    fn spread_means(&self, s: f64) -> Vec<f64> {
        let n = self.model.n_spreads();
        (0..n)
            .map(|k| {
                let spec = &self.model.spreads[k];
                let mut m = spec.mean_curve().at(s);
                if let Some(u) = self.displacement {
                    m += u[k] * (-spec.kappa() * (s - self.anchor)).exp();
                }
                if let Some(t) = self.tilt {
                    let p = t.index - 1;
                    m -= level_integral_covariance(
                        spec,
                        &self.model.spreads[p],
                        self.model.spread_rho(k + 1, t.index),
                        self.anchor,
                        s,
                        t.horizon,
                    );
                }
                m
            })
            .collect()
    }

    fn spread_cov(&self, s: f64) -> DMatrix<f64> {
        let n = self.model.n_spreads();
        let mut cov = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let c = spread_cross_covariance(
                    &self.model.spreads[i],
                    &self.model.spreads[j],
                    self.model.spread_rho(i + 1, j + 1),
                    self.anchor,
                    s,
                    s,
                );
                cov[(i, j)] = c;
                cov[(j, i)] = c;
            }
        }
        cov
    }

    /// Means of the spreads entering the maximum (without the floor).
    pub fn means(&self, s: f64) -> Vec<f64> {
        self.spread_means(s)
    }

    pub fn snapshot(&self, s: f64) -> Result<GaussianVectorSnapshot> {
        let means = self.means(s);
        let cov = self.spread_cov(s);
        GaussianVectorSnapshot::new(s, means, cov)
    }

    fn knots(&self, a: f64, b: f64) -> Vec<f64> {
        let mut k: Vec<f64> = self
            .model
            .spreads
            .iter()
            .flat_map(|s| s.mean_curve().knots_between(a, b).collect::<Vec<_>>())
            .collect();
        k.sort_by(f64::total_cmp);
        k
    }
}

/// Uniform grid with `nodes_per_year` resolution, merged with curve knots and
/// any extra times (all inside `[t0, t_end]`).
pub fn pricing_grid(t0: f64, t_end: f64, nodes_per_year: usize, extra: &[f64]) -> Vec<f64> {
    let span = t_end - t0;
    let n = ((span * nodes_per_year as f64).ceil() as usize).max(1);
    let mut g: Vec<f64> = (0..=n).map(|k| t0 + span * k as f64 / n as f64).collect();
    g[n] = t_end;
    g.extend(extra.iter().copied().filter(|&t| t > t0 && t < t_end));
    g.sort_by(f64::total_cmp);
    g.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    // keep the exact endpoint after dedup
    *g.last_mut().unwrap() = t_end;
    g
}

/// Exact integral over `[ta, tb]` of the maximum of functions linear between
/// the given endpoint values (plus 0 when `with_zero`).
pub fn integral_of_max_linear(ta: f64, tb: f64, va: &[f64], vb: &[f64], with_zero: bool) -> f64 {
    let n = va.len() + usize::from(with_zero);
    let get = |v: &[f64], k: usize| if k < v.len() { v[k] } else { 0.0 };
    let mut cuts: Vec<f64> = Vec::new();
    for p in 0..n {
        for q in 0..p {
            let da = get(va, p) - get(va, q);
            let db = get(vb, p) - get(vb, q);
            if (da < 0.0 && db > 0.0) || (da > 0.0 && db < 0.0) {
                cuts.push(da / (da - db));
            }
        }
    }
    let max_at = |x: f64| -> f64 {
        let mut m = f64::NEG_INFINITY;
        for k in 0..n {
            let a = get(va, k);
            let v = if x == 0.0 {
                a
            } else if x == 1.0 {
                get(vb, k)
            } else {
                a + (get(vb, k) - a) * x
            };
            m = m.max(v);
        }
        m
    };
    let h = tb - ta;
    if cuts.is_empty() {
        return 0.5 * h * (max_at(0.0) + max_at(1.0));
    }
    cuts.push(0.0);
    cuts.push(1.0);
    cuts.sort_by(f64::total_cmp);
    cuts.windows(2)
        .map(|w| 0.5 * (w[1] - w[0]) * h * (max_at(w[0]) + max_at(w[1])))
        .sum()
}

/// `exp(-int_{t0}^{T} max(0, qhat_1, ..., qhat_N))`, exact for piecewise-linear
/// curves.
pub fn ctd_deterministic(model: &MarketModel, t0: f64, t_end: f64) -> Result<f64> {
    model.check_horizon(t0, t_end)?;
    if t_end <= t0 {
        return Ok(1.0);
    }
    let fam = Family::standard(model, t0);
    let mut pts = vec![t0];
    pts.extend(fam.knots(t0, t_end));
    pts.push(t_end);
    let mut integral = 0.0;
    for w in pts.windows(2) {
        integral += integral_of_max_linear(w[0], w[1], &fam.means(w[0]), &fam.means(w[1]), true);
    }
    Ok((-integral).exp())
}

/// Integral-variance estimator
/// `int_{t0}^{T} int_{t0}^{s} v dt ds + int_{t0}^{T} (T - s) v ds` of the
/// piecewise-linear interpolant of `(times, vars)`, integrated exactly.
pub fn integral_variance_estimator(times: &[f64], vars: &[f64], t0: f64, t_end: f64) -> Result<f64> {
    if times.len() != vars.len() || times.len() < 2 {
        return Err(CtdError::validation("variance curve needs matching times and values"));
    }
    if vars.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(CtdError::validation("variance curve must be non-negative"));
    }
    let (first, last) = (times[0], *times.last().unwrap());
    if t0 < first - TIME_EPS || t_end > last + TIME_EPS {
        let t = if t0 < first - TIME_EPS { t0 } else { t_end };
        return Err(CtdError::Domain {
            t,
            start: first,
            end: last,
        });
    }
    if t_end <= t0 {
        return Ok(0.0);
    }
    let interp = |t: f64| -> f64 {
        let k = times.partition_point(|&x| x < t).clamp(1, times.len() - 1) - 1;
        let (a, b) = (times[k], times[k + 1]);
        vars[k] + (vars[k + 1] - vars[k]) * (t - a) / (b - a)
    };
    let mut pts = vec![(t0, interp(t0))];
    for (t, v) in times.iter().zip(vars) {
        if *t > t0 && *t < t_end {
            pts.push((*t, *v));
        }
    }
    pts.push((t_end, interp(t_end)));
    let (i0, i1) = variance_moments(&pts, t0);
    Ok(psi_from_moments(t_end - t0, i0, i1))
}

/// Cumulative `int v` and `int (s - t0) v` over linear segments.
fn variance_moments(pts: &[(f64, f64)], t0: f64) -> (f64, f64) {
    let mut i0 = 0.0;
    let mut i1 = 0.0;
    for w in pts.windows(2) {
        let ((a, va), (b, vb)) = (w[0], w[1]);
        let (d0, d1) = segment_moments(a - t0, b - t0, va, vb);
        i0 += d0;
        i1 += d1;
    }
    (i0, i1)
}

#[inline]
fn segment_moments(a: f64, b: f64, va: f64, vb: f64) -> (f64, f64) {
    let h = b - a;
    let m = 0.5 * (a + b);
    let vm = 0.5 * (va + vb);
    (0.5 * h * (va + vb), h / 6.0 * (a * va + 4.0 * m * vm + b * vb))
}

/// Both double integrals equal `int (T - s) v ds`, so the estimator is twice it.
#[inline]
fn psi_from_moments(tau: f64, i0: f64, i1: f64) -> f64 {
    (2.0 * (tau * i0 - i1)).max(0.0)
}

/// Moments of the family's maximum on `grid`, evaluated independently per node.
pub fn family_moments(family: &Family<'_>, grid: &[f64]) -> Result<(MaxMoments, CfDiagnostics)> {
    let nodes: Vec<Result<(f64, f64, f64, bool, f64)>> = grid
        .par_iter()
        .map(|&s| {
            let snap = family.snapshot(s)?;
            let state = CommonFactorState::from_snapshot(&snap, true)?;
            let (m, v) = max_moments(&state)?;
            Ok((m, v, state.gamma, state.fit.clamped, state.fit.max_residual))
        })
        .collect();
    let mut out = MaxMoments {
        times: grid.to_vec(),
        means: Vec::with_capacity(grid.len()),
        variances: Vec::with_capacity(grid.len()),
    };
    let mut diag = CfDiagnostics {
        nodes: grid.len(),
        gamma_min: f64::INFINITY,
        gamma_max: f64::NEG_INFINITY,
        ..Default::default()
    };
    for r in nodes {
        let (m, v, g, clamped, resid) = r?;
        out.means.push(m);
        out.variances.push(v);
        diag.gamma_min = diag.gamma_min.min(g);
        diag.gamma_max = diag.gamma_max.max(g);
        diag.gamma_clamped_nodes += usize::from(clamped);
        diag.max_cov_residual = diag.max_cov_residual.max(resid);
    }
    Ok((out, diag))
}

/// Prices `E[exp(-int max)]` for the family at every maturity in one pass.
pub fn price_family(
    family: &Family<'_>,
    t0: f64,
    maturities: &[f64],
    settings: CfSettings,
) -> Result<(Vec<CfQuote>, CfDiagnostics)> {
    if maturities.is_empty() {
        return Ok((Vec::new(), CfDiagnostics::default()));
    }
    if maturities.windows(2).any(|w| w[1] < w[0]) || maturities[0] < t0 {
        return Err(CtdError::validation("maturities must be ascending and not before t0"));
    }
    let t_end = *maturities.last().unwrap();
    family.model.check_horizon(t0, t_end)?;
    if t_end <= t0 {
        let q = maturities
            .iter()
            .map(|&m| CfQuote {
                maturity: m,
                value: 1.0,
                mean_integral: 0.0,
                psi: 0.0,
            })
            .collect();
        return Ok((q, CfDiagnostics::default()));
    }
    let mut extra = family.knots(t0, t_end);
    extra.extend_from_slice(maturities);
    let grid = pricing_grid(t0, t_end, settings.nodes_per_year.max(1), &extra);
    let (mom, mut diag) = family_moments(family, &grid)?;
    let node_means: Vec<Vec<f64>> = grid.iter().map(|&s| family.means(s)).collect();
    let det_max: Vec<f64> = node_means
        .iter()
        .map(|m| m.iter().copied().fold(0.0, f64::max))
        .collect();

    let mut quotes = Vec::with_capacity(maturities.len());
    let mut base = 0.0;
    let mut corr = 0.0;
    let (mut i0, mut i1) = (0.0, 0.0);
    let mut next = 0;
    let mut emit = |k: usize, base: f64, corr: f64, i0: f64, i1: f64, quotes: &mut Vec<CfQuote>| {
        while next < maturities.len() && (maturities[next] - grid[k]).abs() < 1e-9 {
            let mean_integral = base + corr;
            let psi = psi_from_moments(grid[k] - t0, i0, i1);
            quotes.push(CfQuote {
                maturity: maturities[next],
                value: (-mean_integral).exp() * (1.0 + 0.5 * psi),
                mean_integral,
                psi,
            });
            next += 1;
        }
    };
    emit(0, 0.0, 0.0, 0.0, 0.0, &mut quotes);
    for k in 1..grid.len() {
        let (a, b) = (grid[k - 1], grid[k]);
        base += integral_of_max_linear(a, b, &node_means[k - 1], &node_means[k], true);
        let ga = mom.means[k - 1] - det_max[k - 1];
        let gb = mom.means[k] - det_max[k];
        corr += 0.5 * (b - a) * (ga + gb);
        let (d0, d1) = segment_moments(a - t0, b - t0, mom.variances[k - 1], mom.variances[k]);
        i0 += d0;
        i1 += d1;
        emit(k, base, corr, i0, i1, &mut quotes);
    }
    if quotes.len() != maturities.len() {
        return Err(CtdError::numerical("maturity missing from pricing grid"));
    }
    let last = quotes.last().unwrap();
    diag.mean_integral = last.mean_integral;
    diag.psi = last.psi;
    Ok((quotes, diag))
}

/// Second-order common-factor CTD discount factor
/// `exp(-int E[M]) (1 + Psi / 2)`.
pub fn ctd_common_factor(model: &MarketModel, t0: f64, t_end: f64, settings: CfSettings) -> Result<f64> {
    ctd_common_factor_detailed(model, t0, t_end, settings).map(|(v, _)| v)
}

pub fn ctd_common_factor_detailed(
    model: &MarketModel,
    t0: f64,
    t_end: f64,
    settings: CfSettings,
) -> Result<(f64, CfDiagnostics)> {
    let (q, d) = price_family(&Family::standard(model, t0), t0, &[t_end], settings)?;
    Ok((q[0].value, d))
}

/// Common-factor CTD factors for several maturities sharing one grid.
pub fn ctd_common_factor_term(
    model: &MarketModel,
    t0: f64,
    maturities: &[f64],
    settings: CfSettings,
) -> Result<Vec<f64>> {
    let (q, _) = price_family(&Family::standard(model, t0), t0, maturities, settings)?;
    Ok(q.into_iter().map(|q| q.value).collect())
}

/// `E[exp(-int (max(0, q_1, ..., q_N) + q_p))]`, the collateral-choice factor
/// times the spread bond of `q_p`.
///
/// Multiplying by `exp(-int q_p)` is a Gaussian change of measure, so this is
/// `E[exp(-int q_p)]` times the common-factor CTD of the tilted spreads.
pub fn shifted_max_ctd(
    model: &MarketModel,
    pivot: usize,
    t0: f64,
    t_end: f64,
    settings: CfSettings,
) -> Result<f64> {
    if pivot == 0 || pivot > model.n_spreads() {
        return Err(CtdError::validation(format!(
            "pivot index {pivot} outside 1..={}",
            model.n_spreads()
        )));
    }
    let fam = Family {
        model,
        anchor: t0,
        displacement: None,
        tilt: Some(Tilt {
            index: pivot,
            horizon: t_end,
        }),
    };
    let (q, _) = price_family(&fam, t0, &[t_end], settings)?;
    Ok(bond_moment(&model.spreads[pivot - 1], t0, t_end, 1)? * q[0].value)
}

/// Common-factor CTD factors at time `t` given the spreads' OU displacements
/// `u_i(t) = q_i(t) - qhat_i(t)`.
pub fn conditional_ctd_term(
    model: &MarketModel,
    t: f64,
    displacement: &[f64],
    maturities: &[f64],
    settings: CfSettings,
) -> Result<Vec<f64>> {
    if displacement.len() != model.n_spreads() {
        return Err(CtdError::validation("displacement length differs from spread count"));
    }
    let fam = Family {
        model,
        anchor: t,
        displacement: Some(displacement),
        tilt: None,
    };
    let (q, _) = price_family(&fam, t, maturities, settings)?;
    Ok(q.into_iter().map(|q| q.value).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::SpreadCurve;
    use crate::spread_model::{CorrelationMatrix, HullWhiteSpec};
    use approx::assert_abs_diff_eq;

    fn spec(k: f64, xi: f64, c: SpreadCurve) -> HullWhiteSpec {
        HullWhiteSpec::new(k, xi, c).unwrap()
    }

    fn two_spread(q1: SpreadCurve, q2: SpreadCurve, xi1: f64, xi2: f64, rho: f64) -> MarketModel {
        let dom = spec(0.1, 0.0, SpreadCurve::constant(0.0, 20.0, 0.0).unwrap());
        MarketModel::new(
            dom,
            vec![spec(0.0078, xi1, q1), spec(0.0076, xi2, q2)],
            CorrelationMatrix::two_spreads(rho).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn psi_polynomial_examples() {
        let t = [0.0, 0.5, 1.0];
        assert_eq!(integral_variance_estimator(&t, &[0.0; 3], 0.0, 1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(
            integral_variance_estimator(&t, &[0.3; 3], 0.0, 1.0).unwrap(),
            0.3,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            integral_variance_estimator(&[0.0, 1.0], &[0.0, 1.0], 0.0, 1.0).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-15
        );
        let long = [0.0, 2.0, 5.0];
        assert_abs_diff_eq!(
            integral_variance_estimator(&long, &[0.2; 3], 1.0, 4.0).unwrap(),
            0.2 * 9.0,
            epsilon = 1e-14
        );
        assert!(integral_variance_estimator(&t, &[0.1; 3], 0.0, 2.0).is_err());
    }

    /// Direct double integral with nested Gauss-Legendre on each segment.
    #[test]
    fn psi_matches_direct_double_integral() {
        let times = [0.0, 1.0, 2.5, 4.0];
        let vars = [0.0, 2.0, 1.0, 3.0];
        let v = |t: f64| {
            let k = times.partition_point(|&x| x < t).clamp(1, 3) - 1;
            vars[k] + (vars[k + 1] - vars[k]) * (t - times[k]) / (times[k + 1] - times[k])
        };
        let rule = crate::numerics::legendre(40);
        let piecewise = |a: f64, b: f64, f: &dyn Fn(f64) -> f64| -> f64 {
            let mut p = vec![a];
            p.extend(times.iter().copied().filter(|&t| t > a && t < b));
            p.push(b);
            p.windows(2).map(|w| rule.integrate(w[0], w[1], f)).sum()
        };
        let (t0, tt) = (0.5, 3.7);
        let inner = |s: f64| piecewise(t0, s, &v);
        let direct = piecewise(t0, tt, &inner) + piecewise(t0, tt, &|s| (tt - s) * v(s));
        let psi = integral_variance_estimator(&times, &vars, t0, tt).unwrap();
        assert_abs_diff_eq!(psi, direct, epsilon = 1e-10);
    }

    #[test]
    fn max_linear_integral() {
        // lines 1 - x and x on [0, 1]: max integral 3/4
        assert_abs_diff_eq!(
            integral_of_max_linear(0.0, 1.0, &[1.0, 0.0], &[0.0, 1.0], false),
            0.75,
            epsilon = 1e-15
        );
        // single line from -1 to 1 floored: 1/4
        assert_abs_diff_eq!(
            integral_of_max_linear(0.0, 1.0, &[-1.0], &[1.0], true),
            0.25,
            epsilon = 1e-15
        );
    }

    #[test]
    fn deterministic_examples() {
        let neg = SpreadCurve::constant(0.0, 10.0, -0.01).unwrap();
        let m = two_spread(neg.clone(), neg.shifted(-0.002), 0.0, 0.0, 0.0);
        assert_eq!(ctd_deterministic(&m, 0.0, 10.0).unwrap(), 1.0);
        let m = two_spread(
            SpreadCurve::constant(0.0, 10.0, 0.014).unwrap(),
            SpreadCurve::constant(0.0, 10.0, 0.0133).unwrap(),
            0.0018,
            0.0023,
            0.5,
        );
        assert_abs_diff_eq!(ctd_deterministic(&m, 0.0, 10.0).unwrap(), (-0.14f64).exp(), epsilon = 1e-15);
        assert_eq!(ctd_deterministic(&m, 3.0, 3.0).unwrap(), 1.0);
        assert_eq!(ctd_common_factor(&m, 3.0, 3.0, CfSettings::default()).unwrap(), 1.0);
    }

    #[test]
    fn deterministic_crossing_matches_riemann_sum() {
        let q1 = SpreadCurve::linear(0.0, 10.0, 0.02, 0.002).unwrap();
        let q2 = SpreadCurve::linear(0.0, 10.0, 0.0092, 0.0152).unwrap();
        // crossing: 0.02 - 0.0018 t = 0.0092 + 0.0006 t -> t = 4.5
        let m = two_spread(q1.clone(), q2.clone(), 0.0, 0.0, 0.0);
        let exact = 0.5 * 4.5 * (0.02 + q1.at(4.5)) + 0.5 * 5.5 * (q2.at(4.5) + 0.0152);
        assert_abs_diff_eq!(ctd_deterministic(&m, 0.0, 10.0).unwrap(), (-exact).exp(), epsilon = 1e-15);
        let n = 2_000_000;
        let h = 10.0 / n as f64;
        let riemann: f64 = (0..n)
            .map(|k| {
                let t = (k as f64 + 0.5) * h;
                q1.at(t).max(q2.at(t)).max(0.0) * h
            })
            .sum();
        let rel = ((-riemann).exp() / ctd_deterministic(&m, 0.0, 10.0).unwrap() - 1.0).abs();
        assert!(rel < 1e-9, "{rel}");
    }

    #[test]
    fn zero_volatility_collapse_is_exact() {
        let q1 = SpreadCurve::linear(0.0, 10.0, 0.02, 0.002).unwrap();
        let q2 = SpreadCurve::new(vec![0.0, 3.0, 10.0], vec![-0.001, 0.01, 0.0152]).unwrap();
        let m = two_spread(q1, q2, 0.0, 0.0, 0.3);
        let det = ctd_deterministic(&m, 0.0, 10.0).unwrap();
        let cf = ctd_common_factor(&m, 0.0, 10.0, CfSettings::default()).unwrap();
        assert_abs_diff_eq!(cf, det, epsilon = 1e-15);
        let tiny = m.with_spread_xi(1e-7).unwrap();
        let cf = ctd_common_factor(&tiny, 0.0, 10.0, CfSettings::default()).unwrap();
        assert_abs_diff_eq!(cf, det, epsilon = 1e-8);
    }

    #[test]
    fn floor_dominates_strongly_negative_spread() {
        let dom = spec(0.1, 0.0, SpreadCurve::constant(0.0, 10.0, 0.0).unwrap());
        let m = MarketModel::new(
            dom,
            vec![spec(0.5, 1e-4, SpreadCurve::constant(0.0, 10.0, -0.05).unwrap())],
            CorrelationMatrix::identity(2),
        )
        .unwrap();
        let cf = ctd_common_factor(&m, 0.0, 10.0, CfSettings::default()).unwrap();
        assert_abs_diff_eq!(cf, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn term_structure_matches_single_maturities() {
        let m = two_spread(
            SpreadCurve::constant(0.0, 20.0, 0.014).unwrap(),
            SpreadCurve::constant(0.0, 20.0, 0.0133).unwrap(),
            0.0018,
            0.0023,
            0.5,
        );
        let s = CfSettings::default();
        let term = ctd_common_factor_term(&m, 0.0, &[5.0, 10.0, 20.0], s).unwrap();
        for (t, v) in [5.0, 10.0, 20.0].iter().zip(&term) {
            let single = ctd_common_factor(&m, 0.0, *t, s).unwrap();
            assert_abs_diff_eq!(*v, single, epsilon = 1e-12);
        }
    }

    #[test]
    fn grid_refinement_converges() {
        let m = two_spread(
            SpreadCurve::linear(0.0, 20.0, 0.014, 0.01).unwrap(),
            SpreadCurve::constant(0.0, 20.0, 0.0133).unwrap(),
            0.0018,
            0.0023,
            0.5,
        );
        let a = ctd_common_factor(&m, 0.0, 20.0, CfSettings { nodes_per_year: 24 }).unwrap();
        let b = ctd_common_factor(&m, 0.0, 20.0, CfSettings { nodes_per_year: 48 }).unwrap();
        let c = ctd_common_factor(&m, 0.0, 20.0, CfSettings { nodes_per_year: 96 }).unwrap();
        assert!((b - c).abs() < 1e-7, "{b} {c}");
        assert!((a - b).abs() > (b - c).abs());
    }

    #[test]
    fn shifted_max_limits() {
        let q1 = SpreadCurve::linear(0.0, 10.0, 0.02, 0.002).unwrap();
        let q2 = SpreadCurve::constant(0.0, 10.0, 0.0092).unwrap();
        let m = two_spread(q1.clone(), q2.clone(), 0.0, 0.0, 0.3);
        let det = ctd_deterministic(&m, 0.0, 10.0).unwrap();
        let s = CfSettings::default();
        let v = shifted_max_ctd(&m, 2, 0.0, 10.0, s).unwrap();
        assert_abs_diff_eq!(v, det * (-q2.integral(0.0, 10.0)).exp(), epsilon = 1e-15);
        assert!(shifted_max_ctd(&m, 3, 0.0, 10.0, s).is_err());

        let dom = spec(0.1, 0.0, SpreadCurve::constant(0.0, 10.0, 0.0).unwrap());
        let one = MarketModel::new(
            dom,
            vec![spec(0.2, 1e-6, SpreadCurve::constant(0.0, 10.0, 0.01).unwrap())],
            CorrelationMatrix::identity(2),
        )
        .unwrap();
        let v = shifted_max_ctd(&one, 1, 0.0, 10.0, s).unwrap();
        assert_abs_diff_eq!(v, (-0.2f64).exp(), epsilon = 1e-9);
    }

    #[test]
    fn conditional_at_zero_displacement_matches_restart() {
        let m = two_spread(
            SpreadCurve::constant(0.0, 20.0, 0.014).unwrap(),
            SpreadCurve::constant(0.0, 20.0, 0.0133).unwrap(),
            0.0018,
            0.0023,
            0.5,
        );
        let s = CfSettings::default();
        let c = conditional_ctd_term(&m, 2.0, &[0.0, 0.0], &[12.0], s).unwrap()[0];
        let direct = ctd_common_factor(&m, 2.0, 12.0, s).unwrap();
        assert_abs_diff_eq!(c, direct, epsilon = 1e-15);
        // a positive shock to the leading spread lowers the factor
        let up = conditional_ctd_term(&m, 2.0, &[0.002, 0.0], &[12.0], s).unwrap()[0];
        assert!(up < c);
    }

    #[test]
    fn family_reconstructs_marginals() {
        let m = two_spread(
            SpreadCurve::constant(0.0, 20.0, 0.014).unwrap(),
            SpreadCurve::constant(0.0, 20.0, 0.0133).unwrap(),
            0.0018,
            0.0023,
            0.5,
        );
        let fam = Family::standard(&m, 0.0);
        for t in [0.5, 5.0, 10.0] {
            let snap = fam.snapshot(t).unwrap();
            let st = CommonFactorState::from_snapshot(&snap, true).unwrap();
            for i in 0..2 {
                assert_abs_diff_eq!(st.marginal_variance(i), snap.variance(i), epsilon = 1e-12);
                assert_eq!(st.component_means[i], snap.means[i]);
            }
            let off = st.gamma * st.sigma_min_sq;
            assert_abs_diff_eq!(off, snap.covariance[(0, 1)], epsilon = 1e-12);
        }
    }
}
