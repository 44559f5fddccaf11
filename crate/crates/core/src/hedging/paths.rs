//! Pathwise revaluation of hedge portfolios and the P&L of synthetically
//! replicated CTD swaps on simulated markets.
//!
//! The collateral-choice bond at an interior time is priced by the
//! common-factor method conditional on the simulated spread displacements.
//! Those prices are tabulated on a tensor grid in displacement space and
//! interpolated with Catmull-Rom splines in `log CTD`.

use rayon::prelude::*;
use serde::Serialize;

use super::portfolio::{Portfolio, Quotes};
use crate::ctd_engine::{conditional_ctd_term, CfSettings};
use crate::curve::TIME_EPS;
use crate::error::{CtdError, Result};
use crate::instruments::{conditional_bond, ctd_factors, swap_legs_given, CtdMethod, SwapSpec};
use crate::montecarlo::{estimate, PathBundle};
use crate::numerics::pairwise_sum;
use crate::spread_model::MarketModel;

/// Grid and pricer settings for conditional revaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RevaluationSettings {
    pub cf: CfSettings,
    /// Grid points per spread dimension.
    pub points_per_dim: usize,
    /// Half-width of the grid in standard deviations of the displacement.
    pub width_sd: f64,
    /// Number of leading paths kept in full.
    pub sample_paths: usize,
}

impl Default for RevaluationSettings {
    fn default() -> Self {
        Self {
            cf: CfSettings { nodes_per_year: 6 },
            points_per_dim: 21,
            width_sd: 5.0,
            sample_paths: 10,
        }
    }
}

const MAX_SURFACE_POINTS: usize = 200_000;

#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    step: f64,
    n: usize,
}

/// Conditional `log CTD(t, T_k | u)` tabulated over spread displacements `u`.
#[derive(Debug, Clone)]
pub struct ConditionalCtdSurface {
    pub t: f64,
    pub maturities: Vec<f64>,
    axes: Vec<Axis>,
    /// Row-major grid, `maturities.len()` values per point.
    values: Vec<f64>,
}

impl ConditionalCtdSurface {
    /// Tabulates maturities after `t`; `origin` is the simulation start that
    /// sets the displacement spread at `t`.
    pub fn build(
        model: &MarketModel,
        origin: f64,
        t: f64,
        maturities: &[f64],
        settings: &RevaluationSettings,
    ) -> Result<Self> {
        if settings.points_per_dim < 4 {
            return Err(CtdError::validation("conditional grid needs at least 4 points per dimension"));
        }
        let axes: Vec<Axis> = model
            .spreads
            .iter()
            .map(|s| {
                let sd = s.variance(t - origin).max(0.0).sqrt();
                if sd == 0.0 {
                    Axis { lo: 0.0, step: 1.0, n: 1 }
                } else {
                    let half = settings.width_sd * sd;
                    let n = settings.points_per_dim;
                    Axis {
                        lo: -half,
                        step: 2.0 * half / (n - 1) as f64,
                        n,
                    }
                }
            })
            .collect();
        let total: usize = axes.iter().map(|a| a.n).product();
        if total > MAX_SURFACE_POINTS {
            return Err(CtdError::validation(format!(
                "conditional grid would need {total} points; reduce points_per_dim"
            )));
        }
        let live: Vec<f64> = maturities.iter().copied().filter(|&m| m > t + TIME_EPS).collect();
        let m = live.len();
        let rows: Vec<Vec<f64>> = (0..total)
            .into_par_iter()
            .map(|flat| {
                if m == 0 {
                    return Ok(Vec::new());
                }
                let mut rest = flat;
                let mut u = vec![0.0; axes.len()];
                for d in (0..axes.len()).rev() {
                    let a = axes[d];
                    u[d] = a.lo + a.step * (rest % a.n) as f64;
                    rest /= a.n;
                }
                let ctd = conditional_ctd_term(model, t, &u, &live, settings.cf)?;
                Ok(ctd.iter().map(|c| c.ln()).collect())
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            t,
            maturities: live,
            axes,
            values: rows.concat(),
        })
    }

    /// `CTD(t, T_k | u)` for every tabulated maturity.
    pub fn eval(&self, u: &[f64], out: &mut [f64]) {
        let m = self.maturities.len();
        out[..m].iter_mut().for_each(|v| *v = 0.0);
        if m == 0 {
            return;
        }
        let dims = self.axes.len();
        // per dimension: four grid indices and weights
        let mut idx = vec![[0usize; 4]; dims];
        let mut wts = vec![[0.0f64; 4]; dims];
        for d in 0..dims {
            let a = self.axes[d];
            if a.n == 1 {
                idx[d] = [0; 4];
                wts[d] = [1.0, 0.0, 0.0, 0.0];
                continue;
            }
            let x = ((u[d] - a.lo) / a.step).clamp(0.0, (a.n - 1) as f64);
            let i = (x.floor() as usize).min(a.n - 2);
            let f = x - i as f64;
            let (f2, f3) = (f * f, f * f * f);
            wts[d] = [
                0.5 * (-f3 + 2.0 * f2 - f),
                0.5 * (3.0 * f3 - 5.0 * f2 + 2.0),
                0.5 * (-3.0 * f3 + 4.0 * f2 + f),
                0.5 * (f3 - f2),
            ];
            let clampi = |k: isize| k.clamp(0, a.n as isize - 1) as usize;
            idx[d] = [
                clampi(i as isize - 1),
                i,
                i + 1,
                clampi(i as isize + 2),
            ];
        }
        let combos = 4usize.pow(dims as u32);
        for c in 0..combos {
            let mut w = 1.0;
            let mut flat = 0;
            let mut code = c;
            for d in 0..dims {
                let s = code % 4;
                code /= 4;
                w *= wts[d][s];
                flat = flat * self.axes[d].n + idx[d][s];
            }
            if w == 0.0 {
                continue;
            }
            let row = &self.values[flat * m..(flat + 1) * m];
            for (o, v) in out.iter_mut().zip(row) {
                *o += w * v;
            }
        }
        out[..m].iter_mut().for_each(|v| *v = v.exp());
    }
}

/// Per-time mean and standard deviation of one portfolio across paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortfolioPathStats {
    pub name: String,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Standard error of `sd`.
    pub sd_stderr: Vec<f64>,
    /// Mean of the positions without the cash account.
    pub mean_ex_cash: Vec<f64>,
    /// Leading sample paths, `samples[path][time]`.
    pub samples: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathEvaluation {
    pub times: Vec<f64>,
    pub portfolios: Vec<PortfolioPathStats>,
}

/// OU displacements of every process on `path` at recorded index `k`.
pub fn state_at(model: &MarketModel, bundle: &PathBundle, path: usize, k: usize, out: &mut [f64]) {
    let t = bundle.times[k];
    for (p, o) in out.iter_mut().enumerate() {
        *o = bundle.level(path, k, p) - model.process(p).mean_curve().at(t);
    }
}

/// Mean, standard deviation and the standard error of the latter.
fn moments(values: &[f64], antithetic: bool) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = pairwise_sum(values) / n;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1.0);
    let sd = var.sqrt();
    let se_var = estimate(&sq, antithetic).stderr;
    let se_sd = if sd > 0.0 { se_var / (2.0 * sd) } else { 0.0 };
    (mean, sd, se_sd)
}

/// Revalues each portfolio at every recorded time of `bundle` in
/// `[t0, T]`.
pub fn evaluate_portfolio_paths(
    model: &MarketModel,
    portfolios: &[Portfolio],
    bundle: &PathBundle,
    settings: &RevaluationSettings,
) -> Result<PathEvaluation> {
    let first = portfolios
        .first()
        .ok_or_else(|| CtdError::validation("no portfolios to evaluate"))?;
    let (t0, t_end) = (first.t0, first.maturity);
    if portfolios.iter().any(|p| p.t0 != t0 || p.maturity != t_end) {
        return Err(CtdError::validation("portfolios must share start and maturity"));
    }
    if bundle.n_processes != model.n_spreads() + 1 {
        return Err(CtdError::validation("path bundle does not match the model"));
    }
    let k0 = bundle.time_index(t0)?;
    bundle.time_index(t_end)?;
    let ks: Vec<usize> = (k0..bundle.times.len())
        .filter(|&k| bundle.times[k] <= t_end + TIME_EPS)
        .collect();
    let np = model.n_spreads() + 1;
    let n_keep = settings.sample_paths.min(bundle.n_paths);
    let mut stats: Vec<PortfolioPathStats> = portfolios
        .iter()
        .map(|p| PortfolioPathStats {
            name: p.name.clone(),
            mean: Vec::new(),
            sd: Vec::new(),
            sd_stderr: Vec::new(),
            mean_ex_cash: Vec::new(),
            samples: vec![Vec::new(); n_keep],
        })
        .collect();
    let origin = bundle.times[0];
    for &k in &ks {
        let t = bundle.times[k];
        let surface = ConditionalCtdSurface::build(model, origin, t, &[t_end], settings)?;
        let per_path: Vec<Vec<(f64, f64)>> = (0..bundle.n_paths)
            .into_par_iter()
            .map(|path| {
                let mut state = vec![0.0; np];
                state_at(model, bundle, path, k, &mut state);
                let mut ctd = [1.0];
                surface.eval(&state[1..], &mut ctd);
                let pc = ctd[0] * conditional_bond(&model.domestic, t, t_end, state[0])?;
                let bank = (bundle.integral(path, k, 0) - bundle.integral(path, k0, 0)).exp();
                let q = Quotes {
                    model,
                    t,
                    state: &state,
                    collateral_bond: pc,
                };
                portfolios
                    .iter()
                    .map(|p| {
                        let pos = p.positions_value(&q)?;
                        Ok((pos + p.initial_cash * bank, pos))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        for (j, s) in stats.iter_mut().enumerate() {
            let vals: Vec<f64> = per_path.iter().map(|r| r[j].0).collect();
            let ex: Vec<f64> = per_path.iter().map(|r| r[j].1).collect();
            let (mean, sd, se) = moments(&vals, bundle.antithetic);
            s.mean.push(mean);
            s.sd.push(sd);
            s.sd_stderr.push(se);
            s.mean_ex_cash.push(pairwise_sum(&ex) / ex.len() as f64);
            for (path, row) in s.samples.iter_mut().enumerate() {
                row.push(vals[path]);
            }
        }
    }
    Ok(PathEvaluation {
        times: ks.iter().map(|&k| bundle.times[k]).collect(),
        portfolios: stats,
    })
}

/// Terminal P&L of one synthetic-replication scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PnlDistribution {
    pub method: CtdMethod,
    pub terminal: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

/// P&L of a swap with the collateral choice option hedged by the same swap
/// legs carrying synthetic CTD factors `C_j(t, T_k)`.
///
/// The swap itself is marked with conditional common-factor CTD factors at
/// the simulated state; the synthetic factors come from the forecast curves
/// as seen at each rebalancing date. The account grows at `r_0` between
/// rebalancing dates.
pub fn synthetic_replication_pnl(
    model: &MarketModel,
    swap: &SwapSpec,
    methods: &[CtdMethod],
    bundle: &PathBundle,
    grid: &[f64],
    settings: &RevaluationSettings,
) -> Result<Vec<PnlDistribution>> {
    swap.validate()?;
    if grid.len() < 2 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CtdError::validation("rebalancing grid must be strictly increasing with two or more dates"));
    }
    let on_grid = |d: f64| grid.iter().any(|&g| (g - d).abs() < 1e-9);
    for &d in std::iter::once(&swap.start).chain(&swap.payment_dates) {
        if d >= grid[0] - 1e-9 && !on_grid(d) {
            return Err(CtdError::validation(format!(
                "rebalancing grid is missing swap date {d}"
            )));
        }
    }
    if swap.start < grid[0] - 1e-9 {
        return Err(CtdError::validation("swap starts before the rebalancing grid"));
    }
    if *grid.last().unwrap() < swap.maturity() - 1e-9 {
        return Err(CtdError::validation("rebalancing grid ends before the last payment"));
    }
    let ks = grid.iter().map(|&g| bundle.time_index(g)).collect::<Result<Vec<_>>>()?;
    let np = model.n_spreads() + 1;
    let n_legs = swap.payment_dates.len();
    let n_paths = bundle.n_paths;
    let origin = bundle.times[0];
    let mut fixings: Vec<Vec<Option<f64>>> = vec![vec![None; n_legs]; n_paths];
    let mut prev_pi = vec![vec![0.0; n_paths]; methods.len()];
    let mut pnl = vec![vec![0.0; n_paths]; methods.len()];
    for (l, (&t, &k)) in grid.iter().zip(&ks).enumerate() {
        let live: Vec<f64> = swap.payment_dates.iter().copied().filter(|&d| d >= t - 1e-9).collect();
        let surface = ConditionalCtdSurface::build(model, origin, t, &live, settings)?;
        let synthetic = methods
            .iter()
            .map(|&m| ctd_factors(model, t, &live, m, settings.cf))
            .collect::<Result<Vec<_>>>()?;
        let rows: Vec<(Vec<Option<f64>>, Vec<f64>)> = (0..n_paths)
            .into_par_iter()
            .map(|path| {
                let mut state = vec![0.0; np];
                state_at(model, bundle, path, k, &mut state);
                let mut fix = fixings[path].clone();
                for (j, f) in fix.iter_mut().enumerate() {
                    let s = swap.period_start(j);
                    if f.is_none() && (s - t).abs() < 1e-9 {
                        let p = conditional_bond(&model.domestic, t, swap.payment_dates[j], state[0])?;
                        *f = Some((1.0 / p - 1.0) / swap.accrual(j));
                    }
                }
                let legs = swap_legs_given(model, swap, t, state[0], &fix)?;
                let mut truth = vec![1.0; live.len()];
                let offset = live.len() - surface.maturities.len();
                surface.eval(&state[1..], &mut truth[offset..]);
                let pis = synthetic
                    .iter()
                    .map(|c| {
                        legs.iter()
                            .enumerate()
                            .map(|(a, leg)| (truth[a] - c[a]) * leg.1)
                            .sum::<f64>()
                    })
                    .collect();
                Ok((fix, pis))
            })
            .collect::<Result<_>>()?;
        let growth: Vec<f64> = if l == 0 {
            vec![1.0; n_paths]
        } else {
            let kp = ks[l - 1];
            (0..n_paths)
                .map(|p| (bundle.integral(p, k, 0) - bundle.integral(p, kp, 0)).exp())
                .collect()
        };
        for (path, (fix, pis)) in rows.into_iter().enumerate() {
            fixings[path] = fix;
            for (j, &pi) in pis.iter().enumerate() {
                pnl[j][path] = if l == 0 {
                    pi
                } else {
                    pnl[j][path] * growth[path] + (pi - prev_pi[j][path])
                };
                prev_pi[j][path] = pi;
            }
        }
    }
    Ok(methods
        .iter()
        .zip(pnl)
        .map(|(&method, terminal)| {
            let (mean, sd, _) = moments(&terminal, bundle.antithetic);
            PnlDistribution {
                method,
                terminal,
                mean,
                sd,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::SpreadCurve;
    use crate::hedging::{build_none_portfolio, build_stochastic_portfolio};
    use crate::montecarlo::{simulate, SimulationPlan};
    use crate::spread_model::{CorrelationMatrix, HullWhiteSpec};

    fn model(xi: f64, dom_xi: f64) -> MarketModel {
        let lin = |a, b| SpreadCurve::linear(0.0, 10.0, a, b).unwrap();
        MarketModel::new(
            HullWhiteSpec::new(0.05, dom_xi, SpreadCurve::constant(0.0, 10.0, 0.02).unwrap()).unwrap(),
            vec![
                HullWhiteSpec::new(0.0078, xi, lin(0.003, 0.001)).unwrap(),
                HullWhiteSpec::new(0.0076, 1.3 * xi, lin(0.002, 0.0019)).unwrap(),
            ],
            CorrelationMatrix::two_spreads(0.3).unwrap(),
        )
        .unwrap()
    }

    fn settings() -> RevaluationSettings {
        RevaluationSettings {
            cf: CfSettings { nodes_per_year: 6 },
            ..Default::default()
        }
    }

    #[test]
    fn surface_matches_direct_pricing() {
        let m = model(0.002, 0.0);
        let s = settings();
        let surf = ConditionalCtdSurface::build(&m, 0.0, 4.0, &[7.0, 10.0], &s).unwrap();
        let sd1 = m.spreads[0].variance(4.0).sqrt();
        let sd2 = m.spreads[1].variance(4.0).sqrt();
        for (a, b) in [(0.0, 0.0), (1.3, -0.4), (-2.2, 2.9), (0.37, 0.81)] {
            let u = [a * sd1, b * sd2];
            let mut got = [0.0; 2];
            surf.eval(&u, &mut got);
            let direct = conditional_ctd_term(&m, 4.0, &u, &[7.0, 10.0], s.cf).unwrap();
            for (g, d) in got.iter().zip(&direct) {
                assert!((g / d - 1.0).abs() < 2e-5, "{g} {d} at {u:?}");
            }
        }
    }

    #[test]
    fn surface_at_node_is_exact_and_skips_past_maturities() {
        let m = model(0.002, 0.0);
        let surf = ConditionalCtdSurface::build(&m, 0.0, 4.0, &[3.0, 10.0], &settings()).unwrap();
        assert_eq!(surf.maturities, vec![10.0]);
        let mut got = [0.0];
        surf.eval(&[0.0, 0.0], &mut got);
        let direct = conditional_ctd_term(&m, 4.0, &[0.0, 0.0], &[10.0], settings().cf).unwrap()[0];
        assert!((got[0] - direct).abs() < 1e-15);
    }

    #[test]
    fn zero_volatility_paths_are_flat() {
        let m = model(0.0, 0.0);
        let mut plan = SimulationPlan::new(64, 12, 10.0, 3);
        plan.record_every = 12;
        let bundle = simulate(&m, &plan).unwrap();
        let s = settings();
        let ctd = crate::ctd_engine::ctd_common_factor(&m, 0.0, 10.0, s.cf).unwrap();
        let pc0 = ctd * crate::instruments::zcb_domestic(&m, 0.0, 10.0).unwrap();
        let ports = vec![
            build_none_portfolio(&m, 0.0, 10.0, pc0).unwrap(),
            build_stochastic_portfolio(&m, &[0.0, -0.5, -0.3], 0.0, 10.0, pc0).unwrap(),
        ];
        let ev = evaluate_portfolio_paths(&m, &ports, &bundle, &s).unwrap();
        assert_eq!(ev.times.len(), 11);
        for p in &ev.portfolios {
            assert!(p.sd.iter().all(|&v| v < 1e-12), "{:?}", p.sd);
            assert!(p.mean[0].abs() < 1e-15);
        }
    }

    #[test]
    fn synthetic_pnl_trivial_cases() {
        let swap = SwapSpec::regular(1.0, 0.02, 0.0, 1.0, 4, true).unwrap();
        let grid: Vec<f64> = (0..=8).map(|k| 0.5 * k as f64).collect();
        let methods = [CtdMethod::None, CtdMethod::Deterministic, CtdMethod::CommonFactor];
        let s = settings();

        // exact model: both CTD-aware schemes replicate perfectly
        let m = model(0.0, 0.0);
        let mut plan = SimulationPlan::new(16, 12, 4.0, 9);
        plan.record_every = 6;
        let b = simulate(&m, &plan).unwrap();
        let r = synthetic_replication_pnl(&m, &swap, &methods, &b, &grid, &s).unwrap();
        for d in &r[1..] {
            assert!(d.terminal.iter().all(|v| v.abs() < 1e-12), "{:?}", d.method);
        }

        // no spreads: every scheme coincides
        let zero = SpreadCurve::constant(0.0, 10.0, -0.01).unwrap();
        let m0 = MarketModel::new(
            m.domestic.with_xi(0.01).unwrap(),
            vec![HullWhiteSpec::new(0.1, 0.0, zero).unwrap()],
            CorrelationMatrix::identity(2),
        )
        .unwrap();
        let b0 = simulate(&m0, &plan).unwrap();
        let r0 = synthetic_replication_pnl(&m0, &swap, &methods, &b0, &grid, &s).unwrap();
        for d in &r0 {
            assert!(d.terminal.iter().all(|v| v.abs() < 1e-15));
        }

        let bad: Vec<f64> = vec![0.0, 0.5, 1.5, 2.0, 3.0, 4.0];
        assert!(synthetic_replication_pnl(&m, &swap, &methods, &b, &bad, &s).is_err());
    }
}
