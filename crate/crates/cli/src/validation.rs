//! Executable validation cases tying each engine operation to an
//! independent check, and the acceptance criteria A1 to A10.

use std::fmt::Write as _;

use ctd_core::ctd_engine::{
    conditional_ctd_term, ctd_common_factor, ctd_deterministic, fit_gamma, integral_variance_estimator, max_cdf,
    max_moments, shifted_max_ctd, CfSettings, CommonFactorState, GaussianVectorSnapshot,
};
use ctd_core::curve::SpreadCurve;
use ctd_core::error::CtdError;
use ctd_core::hedging::{
    assemble_quadratic, build_basic_portfolio, build_deterministic_portfolio, build_none_portfolio,
    crossing_schedule, equivalent_alpha, evaluate_portfolio_paths, hedge_report, solve_min_variance, state_at,
    synthetic_replication_pnl, HedgeReport,
};
use ctd_core::instruments::{
    ctd_factors, forward_bond, forward_ibor, swap_value, swap_value_ctd, zcb_domestic, zcb_foreign, CtdMethod,
    ForwardBondContract, SwapSpec,
};
use ctd_core::montecarlo::{
    covariance_estimate, estimate, mc_covariance, mc_ctd, mc_expectation, simulate, simulate_from, McEstimate, Payoff,
    SimulationPlan,
};
use ctd_core::sensitivity::{ctd_sensitivity, sensitivity_profile, BumpRequest, BumpTarget, SensitivityMethod, SweepParameter};
use ctd_core::spread_model::{
    bond_moment, integral_covariance, joint_bond_moment, mean_under_piecewise_theta, spread_cross_covariance,
    spread_mean, theta_continuous, theta_piecewise, CorrelationMatrix, HullWhiteSpec, MarketModel,
};
use gauss_quad::GaussLegendre;
use nalgebra::DMatrix as Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::commands::{run, RunOptions};
use crate::config::{CommandKind, ExperimentConfig};
use crate::output::num;

/// Monte Carlo and sampling sizes. `full` uses the sizes the acceptance
/// criteria are stated at; `quick` keeps the suite under a minute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub pricing_paths: usize,
    pub oracle_paths: usize,
    pub hedge_paths: usize,
    pub pnl_paths: usize,
    pub jensen_models: usize,
    pub outer_states: usize,
    pub inner_paths: usize,
}

impl Budget {
    pub fn full() -> Self {
        Self {
            pricing_paths: 100_000,
            oracle_paths: 1_000_000,
            hedge_paths: 100_000,
            pnl_paths: 20_000,
            jensen_models: 200,
            outer_states: 100,
            inner_paths: 20_000,
        }
    }

    pub fn quick() -> Self {
        Self {
            pricing_paths: 20_000,
            oracle_paths: 100_000,
            hedge_paths: 10_000,
            pnl_paths: 4_000,
            jensen_models: 200,
            outer_states: 10,
            inner_paths: 10_000,
        }
    }
}

/// Where a case's expected value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// A published number or ordering for the model.
    Reference,
    /// An independent computation: closed form, quadrature or Monte Carlo.
    Oracle,
    /// Plumbing with no modelling content.
    Plumbing,
}

impl Source {
    pub fn name(&self) -> &'static str {
        match self {
            Source::Reference => "reference",
            Source::Oracle => "oracle",
            Source::Plumbing => "plumbing",
        }
    }
}

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub passed: bool,
    pub measured: String,
    pub tolerance: String,
    pub note: String,
}

impl Check {
    fn new(passed: bool, measured: impl Into<String>, tolerance: impl Into<String>) -> Self {
        Self {
            passed,
            measured: measured.into(),
            tolerance: tolerance.into(),
            note: String::new(),
        }
    }

    fn note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

type CaseFn = fn(&Budget) -> Result<Check, CtdError>;

pub struct ValidationCase {
    pub id: &'static str,
    pub description: &'static str,
    /// The modelling statement under test, in our own words.
    pub claim: &'static str,
    pub operations: &'static [&'static str],
    pub criterion: &'static str,
    pub source: Source,
    /// Named filters that select this case besides `all` and its id.
    pub groups: &'static [&'static str],
    pub run: CaseFn,
}

/// Every engine operation that must be exercised by at least one case.
pub const OPERATIONS: &[&str] = &[
    "theta_continuous",
    "theta_piecewise",
    "spread_mean",
    "spread_cross_covariance",
    "integral_covariance",
    "bond_moment",
    "joint_bond_moment",
    "fit_gamma",
    "max_cdf",
    "max_moments",
    "integral_variance_estimator",
    "ctd_deterministic",
    "ctd_common_factor",
    "shifted_max_ctd",
    "simulate",
    "mc_ctd",
    "mc_expectation",
    "zcb_domestic",
    "zcb_foreign",
    "forward_bond",
    "forward_ibor",
    "swap_value",
    "swap_value_ctd",
    "ctd_sensitivity",
    "sensitivity_profile",
    "assemble_quadratic",
    "solve_min_variance",
    "crossing_schedule",
    "build_deterministic_portfolio",
    "build_basic_portfolio",
    "build_none_portfolio",
    "evaluate_portfolio_paths",
    "synthetic_replication_pnl",
    "run",
    "run_suite",
];

/// Acceptance criterion ids, with the case ids that decide each.
pub const CRITERIA: &[(&str, &[&str])] = &[
    ("A1", &["theta-calibration"]),
    ("A2", &["cf-vs-mc-volatility-sweep"]),
    ("A3", &["jensen-ordering"]),
    ("A4", &["zero-volatility-collapse"]),
    ("A5", &["quadratic-vs-mc", "integral-covariance-quadrature"]),
    ("A6", &["hedge-weights"]),
    ("A7", &["variance-dominance"]),
    ("A8", &["terminal-values"]),
    ("A9", &["level-sensitivity-structure", "swap-pnl-ordering"]),
    ("A10", &["thread-determinism"]),
];

/// Criteria that cannot hold for a correct engine. The case still runs and
/// reports its failure; `jensen-counterexample` carries the evidence.
pub const KNOWN_UNATTAINABLE: &[&str] = &["A3"];

fn settings() -> CfSettings {
    CfSettings::default()
}

fn bundled(name: &str, overrides: &[&str]) -> Result<ExperimentConfig, CtdError> {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    ExperimentConfig::load(name, &o).map_err(|e| CtdError::validation(e.to_string()))
}

fn bundled_model(name: &str, overrides: &[&str]) -> Result<MarketModel, CtdError> {
    bundled(name, overrides)?.model()
}

fn zero_domestic(t_end: f64) -> Result<HullWhiteSpec, CtdError> {
    HullWhiteSpec::new(0.1, 0.0, SpreadCurve::constant(0.0, t_end, 0.0)?)
}

fn two_spread_model(
    t_end: f64,
    kappa: (f64, f64),
    xi: (f64, f64),
    c1: SpreadCurve,
    c2: SpreadCurve,
    rho: f64,
) -> Result<MarketModel, CtdError> {
    MarketModel::new(
        zero_domestic(t_end)?,
        vec![HullWhiteSpec::new(kappa.0, xi.0, c1)?, HullWhiteSpec::new(kappa.1, xi.1, c2)?],
        CorrelationMatrix::two_spreads(rho)?,
    )
}

fn endpoint_plan(cfg: &ExperimentConfig, paths: usize, t_end: f64) -> SimulationPlan {
    let mut plan = cfg.simulation_plan(t_end);
    plan.n_paths = paths;
    plan.record_every = plan.n_steps().max(1);
    plan
}

/// `|a - b| <= k * se + extra` rendered for the report.
fn within(a: f64, e: &McEstimate, k: f64, extra: f64) -> (bool, f64) {
    let z = if e.stderr > 0.0 { (a - e.mean) / e.stderr } else { 0.0 };
    ((a - e.mean).abs() <= k * e.stderr + extra, z)
}

fn theta_calibration(_: &Budget) -> Result<Check, CtdError> {
    let model = bundled_model("experiment2", &[])?;
    let grid: Vec<f64> = (0..=120).map(|k| 10.0 * k as f64 / 120.0).collect();
    let kinked = SpreadCurve::new(vec![0.0, 3.6, 10.0], vec![0.004, 0.001, 0.003])?;
    let mut specs: Vec<HullWhiteSpec> = (0..=2).map(|p| model.process(p).clone()).collect();
    specs.push(HullWhiteSpec::new(0.0078, 0.0018, kinked)?);
    let mut worst = 0.0f64;
    for spec in &specs {
        let theta = theta_piecewise(spec, &grid)?;
        let means = mean_under_piecewise_theta(spec, &grid, &theta);
        for (k, &t) in grid.iter().enumerate() {
            worst = worst.max((means[k] - spec.mean_curve().at(t)).abs());
        }
    }
    Ok(Check::new(worst < 1e-12, format!("max |mean - curve| = {}", num(worst)), "< 1e-12"))
}

/// Integrates `dm = kappa (theta(t) - m) dt` with RK4 and compares `m(T)`
/// with the curve.
fn theta_continuous_ode(_: &Budget) -> Result<Check, CtdError> {
    let curve = SpreadCurve::new(vec![0.0, 2.0, 5.0, 10.0], vec![0.01, 0.013, 0.011, 0.012])?;
    let spec = HullWhiteSpec::new(0.35, 0.002, curve)?;
    let n = 20_000;
    let h = 10.0 / n as f64;
    let f = |t: f64, m: f64| -> Result<f64, CtdError> { Ok(spec.kappa() * (theta_continuous(&spec, t)? - m)) };
    let mut m = spec.mean_curve().at(0.0);
    let mut worst = 0.0f64;
    for k in 0..n {
        let t = k as f64 * h;
        // Kinks sit on grid points; the right-hand drift applies on each step.
        let tr = t + 1e-12;
        let k1 = f(tr, m)?;
        let k2 = f(t + h / 2.0, m + h / 2.0 * k1)?;
        let k3 = f(t + h / 2.0, m + h / 2.0 * k2)?;
        let k4 = f(t + h - 1e-12, m + h * k3)?;
        m += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        worst = worst.max((m - spread_mean(&spec, t + h)?).abs());
    }
    Ok(Check::new(worst < 1e-10, format!("max |ode - mean| = {}", num(worst)), "< 1e-10"))
}

fn ou_moments_mc(b: &Budget) -> Result<Check, CtdError> {
    let cfg = bundled("experiment1", &[])?;
    let model = cfg.model()?;
    let plan = endpoint_plan(&cfg, b.oracle_paths, 10.0);
    let bundle = simulate(&model, &plan)?;
    let k = bundle.time_index(10.0)?;
    let level = |p: usize| -> Vec<f64> { (0..bundle.n_paths).map(|j| bundle.level(j, k, p)).collect() };
    let (q1, q2) = (level(1), level(2));
    let mut worst = 0.0f64;
    let mut ok = true;
    let mut measured = String::new();
    for (i, j, x, y) in [(1, 1, &q1, &q1), (2, 2, &q2, &q2), (1, 2, &q1, &q2)] {
        let e = covariance_estimate(x, y, bundle.antithetic);
        let exact = spread_cross_covariance(model.process(i), model.process(j), model.spread_rho(i, j), 0.0, 10.0, 10.0);
        let (pass, z) = within(exact, &e, 4.0, 0.0);
        ok &= pass;
        worst = worst.max(z.abs());
        let _ = write!(measured, "cov(q{i},q{j}) z={z:.2}; ");
    }
    let e = covariance_estimate(&q1, &q1, bundle.antithetic);
    let spec = model.process(1);
    let closed = spec.xi().powi(2) * (1.0 - (-2.0 * spec.kappa() * 10.0).exp()) / (2.0 * spec.kappa());
    let (pass, z) = within(closed, &e, 4.0, 0.0);
    ok &= pass;
    let _ = write!(measured, "OU variance formula z={z:.2}");
    Ok(Check::new(ok, measured, "|z| <= 4"))
}

fn integral_covariance_quadrature(_: &Budget) -> Result<Check, CtdError> {
    let model = bundled_model("experiment1", &[])?;
    let rule = GaussLegendre::new(200).map_err(|e| CtdError::numerical(e.to_string()))?;
    let (t0, t_end) = (0.0, 10.0);
    let mut worst = 0.0f64;
    for (i, j) in [(1, 1), (2, 2), (1, 2)] {
        let (a, c, rho) = (model.process(i), model.process(j), model.spread_rho(i, j));
        // 400 nodes per axis: the inner integral is split at the kink u = v.
        let quad = rule.integrate(t0, t_end, |u| {
            rule.integrate(t0, u, |v| spread_cross_covariance(a, c, rho, t0, u, v))
                + rule.integrate(u, t_end, |v| spread_cross_covariance(a, c, rho, t0, u, v))
        });
        let exact = integral_covariance(a, c, rho, t0, t_end);
        worst = worst.max(((exact - quad) / quad).abs());
    }
    Ok(Check::new(worst < 1e-6, format!("max rel error = {}", num(worst)), "< 1e-6"))
}

fn bond_moments_mc(b: &Budget) -> Result<Check, CtdError> {
    let cfg = bundled("experiment1", &[])?;
    let model = cfg.model()?;
    let bundle = simulate(&model, &endpoint_plan(&cfg, b.oracle_paths, 10.0))?;
    let mut ok = true;
    let mut measured = String::new();
    let mut cases: Vec<(String, f64, Payoff)> = Vec::new();
    for i in 1..=2 {
        cases.push((format!("E[Q{i}]"), bond_moment(model.process(i), 0.0, 10.0, 1)?, Payoff::SpreadBond(i)));
        cases.push((format!("E[Q{i}^2]"), bond_moment(model.process(i), 0.0, 10.0, 2)?, Payoff::BondSquared(i)));
    }
    let joint = joint_bond_moment(model.process(1), model.process(2), model.spread_rho(1, 2), 0.0, 10.0)?;
    cases.push(("E[Q1 Q2]".into(), joint, Payoff::JointBond(1, 2)));
    cases.push(("E[Q0]".into(), 1.0, Payoff::Bond(0)));
    for (label, exact, payoff) in cases {
        let e = mc_expectation(&bundle, payoff, 0.0, 10.0)?;
        let (pass, z) = within(exact, &e, 3.0, 1e-14);
        ok &= pass;
        let _ = write!(measured, "{label} z={z:.2}; ");
    }
    Ok(Check::new(ok, measured.trim_end_matches("; "), "|z| <= 3"))
}

fn shifted_max_mc(b: &Budget) -> Result<Check, CtdError> {
    let cfg = bundled("experiment1", &[])?;
    let model = cfg.model()?;
    let bundle = simulate(&model, &endpoint_plan(&cfg, b.oracle_paths, 10.0))?;
    let mut ok = true;
    let mut measured = String::new();
    for i in 1..=2 {
        let cf = shifted_max_ctd(&model, i, 0.0, 10.0, settings())?;
        let e = mc_expectation(&bundle, Payoff::ShiftedMax(i), 0.0, 10.0)?;
        let (pass, z) = within(cf, &e, 3.0, 2e-4);
        ok &= pass;
        let _ = write!(measured, "i={i} cf-mc={} z={z:.2}; ", num(cf - e.mean));
    }
    Ok(Check::new(ok, measured.trim_end_matches("; "), "|cf - mc| <= 3 se + 2e-4"))
}

fn quadratic_vs_mc(b: &Budget) -> Result<Check, CtdError> {
    let cfg = bundled("experiment1", &[])?;
    let model = cfg.model()?;
    let form = assemble_quadratic(&model, 0.0, 10.0, settings())?;
    let bundle = simulate(&model, &endpoint_plan(&cfg, b.oracle_paths, 10.0))?;
    let n = model.n_spreads();
    let mut ok = true;
    let mut worst = 0.0f64;
    let mut measured = String::new();
    for i in 0..=n {
        let e = mc_covariance(&bundle, Payoff::CollateralBond, Payoff::Bond(i), 0.0, 10.0)?;
        let (pass, z) = within(form.b[i], &e, 3.0, 1e-14);
        ok &= pass;
        worst = worst.max(z.abs());
        let _ = write!(measured, "b{i} z={z:.2}; ");
        for j in 0..=i {
            let e = mc_covariance(&bundle, Payoff::Bond(i), Payoff::Bond(j), 0.0, 10.0)?;
            let (pass, z) = within(form.q[(i, j)], &e, 3.0, 1e-14);
            ok &= pass;
            worst = worst.max(z.abs());
            let _ = write!(measured, "Q{i}{j} z={z:.2}; ");
        }
    }
    Ok(Check::new(ok, measured.trim_end_matches("; "), "every |z| <= 3").note(format!("max |z| = {worst:.2}")))
}

fn gamma_fit(_: &Budget) -> Result<Check, CtdError> {
    let model = bundled_model("fig2_sensitivity", &[])?;
    let t = 10.0;
    let cov = Matrix::from_fn(2, 2, |i, j| {
        spread_cross_covariance(model.process(i + 1), model.process(j + 1), model.spread_rho(i + 1, j + 1), 0.0, t, t)
    });
    let means = vec![spread_mean(model.process(1), t)?, spread_mean(model.process(2), t)?];
    let snap = GaussianVectorSnapshot::new(t, means, cov.clone())?;
    let gamma = fit_gamma(&snap)?;
    let implied = gamma * cov[(0, 0)].min(cov[(1, 1)]);
    let err = (implied - cov[(0, 1)]).abs();
    Ok(Check::new(err < 1e-12, format!("|gamma s_min^2 - s12| = {}", num(err)), "< 1e-12"))
}

fn max_moments_checks(b: &Budget) -> Result<Check, CtdError> {
    let std_state = CommonFactorState::from_parts(vec![0.0], vec![1.0], 0.0, true)?;
    let (m, v) = max_moments(&std_state)?;
    let pi2 = 2.0 * std::f64::consts::PI;
    let err_closed = (m - 1.0 / pi2.sqrt()).abs().max((v - (0.5 - 1.0 / pi2)).abs());

    let model = bundled_model("fig2_sensitivity", &[])?;
    let t = 5.0;
    let cov = Matrix::from_fn(2, 2, |i, j| {
        spread_cross_covariance(model.process(i + 1), model.process(j + 1), model.spread_rho(i + 1, j + 1), 0.0, t, t)
    });
    let means = vec![spread_mean(model.process(1), t)?, spread_mean(model.process(2), t)?];
    let state = CommonFactorState::from_snapshot(&GaussianVectorSnapshot::new(t, means, cov)?, true)?;
    let (cf_mean, cf_var) = max_moments(&state)?;

    let cfg = bundled("fig2_sensitivity", &[])?;
    let mut plan = endpoint_plan(&cfg, b.oracle_paths, t);
    plan.steps_per_year = 2;
    plan.record_every = plan.n_steps();
    let bundle = simulate(&model, &plan)?;
    let k = bundle.time_index(t)?;
    let samples: Vec<f64> = (0..bundle.n_paths)
        .map(|j| bundle.level(j, k, 1).max(bundle.level(j, k, 2)).max(0.0))
        .collect();
    let e_mean = estimate(&samples, bundle.antithetic);
    let e_var = covariance_estimate(&samples, &samples, bundle.antithetic);
    let (p_mean, z_mean) = within(cf_mean, &e_mean, 3.0, 0.0);
    let (p_var, z_var) = within(cf_var, &e_var, 3.0, 0.0);

    // Kolmogorov distance of the CDF against the empirical one; DKW bound at 1e-3.
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut ks = 0.0f64;
    for q in 1..20 {
        let x = sorted[(q as f64 / 20.0 * n) as usize];
        let emp = sorted.partition_point(|s| *s <= x) as f64 / n;
        ks = ks.max((max_cdf(&state, x) - emp).abs());
    }
    let dkw = ((2.0f64 / 1e-3).ln() / (2.0 * n)).sqrt();
    let ok = err_closed < 1e-12 && p_mean && p_var && ks <= dkw;
    Ok(Check::new(
        ok,
        format!(
            "standard rectified err={}; mean z={z_mean:.2}; var z={z_var:.2}; cdf sup dist={} (bound {})",
            num(err_closed),
            num(ks),
            num(dkw)
        ),
        "closed form 1e-12; moments |z| <= 3; cdf within DKW band",
    ))
}

fn integral_variance_polynomials(_: &Budget) -> Result<Check, CtdError> {
    let times: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
    let zero = integral_variance_estimator(&times, &vec![0.0; 11], 0.0, 1.0)?;
    let constant = integral_variance_estimator(&times, &vec![0.3; 11], 0.0, 1.0)?;
    let linear = integral_variance_estimator(&times, &times, 0.0, 1.0)?;
    let err = zero.abs().max((constant - 0.3).abs()).max((linear - 1.0 / 3.0).abs());
    Ok(Check::new(err < 1e-14, format!("max error = {}", num(err)), "< 1e-14"))
}

fn deterministic_crossing(_: &Budget) -> Result<Check, CtdError> {
    // Forecasts 0.03 - 0.002 t and 0.021 + 0.0005 t cross at t = 3.6.
    let c1 = SpreadCurve::linear(0.0, 10.0, 0.03, 0.01)?;
    let c2 = SpreadCurve::linear(0.0, 10.0, 0.021, 0.026)?;
    let model = two_spread_model(10.0, (0.0078, 0.0076), (0.0018, 0.0023), c1.clone(), c2.clone(), 0.3)?;
    let value = ctd_deterministic(&model, 0.0, 10.0)?;
    let n = 1_000_000;
    let h = 10.0 / n as f64;
    let riemann: f64 = (0..n)
        .map(|k| {
            let t = (k as f64 + 0.5) * h;
            c1.at(t).max(c2.at(t)).max(0.0) * h
        })
        .sum();
    let oracle = (-riemann).exp();
    let rel = ((value - oracle) / oracle).abs();
    Ok(Check::new(rel < 1e-9, format!("rel error = {}", num(rel)), "< 1e-9"))
}

fn cf_vs_mc(b: &Budget) -> Result<Check, CtdError> {
    let cfg = bundled("fig2_sensitivity", &[])?;
    let model = cfg.model()?;
    let (t0, t_end) = (cfg.horizon.t0, cfg.horizon.maturity);
    let cf = ctd_common_factor(&model, t0, t_end, cfg.cf_settings())?;
    let bundle = simulate(&model, &endpoint_plan(&cfg, b.pricing_paths, t_end))?;
    let e = mc_ctd(&bundle, t0, t_end)?;
    let (ok, z) = within(cf, &e, 2.576, 0.0);
    Ok(Check::new(
        ok,
        format!("cf={} mc={} se={} z={z:.2}", num(cf), num(e.mean), num(e.stderr)),
        "inside 99% band (|z| <= 2.576)",
    ))
}

/// An admissible random model for the ordering property.
fn random_model(rng: &mut ChaCha8Rng) -> Result<(MarketModel, f64), CtdError> {
    let n = rng.random_range(1..=3usize);
    let t_end = rng.random_range(1.0..20.0);
    let mut spreads = Vec::with_capacity(n);
    for _ in 0..n {
        let curve = SpreadCurve::linear(0.0, t_end, rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02))?;
        spreads.push(HullWhiteSpec::new(rng.random_range(0.001..1.0), rng.random_range(0.0..0.01), curve)?);
    }
    loop {
        let mut rows = vec![vec![0.0; n + 1]; n + 1];
        rows[0][0] = 1.0;
        for i in 1..=n {
            rows[i][i] = 1.0;
            for j in 1..i {
                let r = rng.random_range(-0.9..0.9);
                rows[i][j] = r;
                rows[j][i] = r;
            }
        }
        if let Ok(corr) = CorrelationMatrix::new(rows) {
            return Ok((MarketModel::new(zero_domestic(t_end)?, spreads, corr)?, t_end));
        }
    }
}

fn jensen_ordering(b: &Budget) -> Result<Check, CtdError> {
    let mut rng = ChaCha8Rng::seed_from_u64(20190604);
    let models: Vec<(MarketModel, f64)> = (0..b.jensen_models).map(|_| random_model(&mut rng)).collect::<Result<_, _>>()?;
    let excess: Vec<f64> = models
        .par_iter()
        .map(|(m, t)| Ok(ctd_common_factor(m, 0.0, *t, settings())? - ctd_deterministic(m, 0.0, *t)?))
        .collect::<Result<_, CtdError>>()?;
    let violations = excess.iter().filter(|e| **e > 1e-8).count();
    let worst = excess.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(Check::new(
        violations == 0,
        format!("{violations} of {} models exceed the bound; worst excess {}", models.len(), num(worst)),
        "cf <= det + 1e-8 for every model",
    )
    .note("the ordering is not implied by the model; see jensen-counterexample"))
}

/// The true CTD factor exceeds the deterministic one for a single spread
/// with a strongly positive forecast, so the ordering cannot be a theorem.
fn jensen_counterexample(b: &Budget) -> Result<Check, CtdError> {
    let curve = SpreadCurve::constant(0.0, 10.0, 0.02)?;
    let model = MarketModel::new(
        zero_domestic(10.0)?,
        vec![HullWhiteSpec::new(0.01, 0.004, curve)?],
        CorrelationMatrix::identity(2),
    )?;
    let det = ctd_deterministic(&model, 0.0, 10.0)?;
    let cf = ctd_common_factor(&model, 0.0, 10.0, settings())?;
    let mut plan = SimulationPlan::new(b.oracle_paths.min(200_000), 48, 10.0, 7);
    plan.antithetic = true;
    plan.record_every = plan.n_steps();
    let e = mc_ctd(&simulate(&model, &plan)?, 0.0, 10.0)?;
    let z = (e.mean - det) / e.stderr;
    Ok(Check::new(
        z > 4.0 && cf > det,
        format!("det={} mc={} se={} cf={}", num(det), num(e.mean), num(e.stderr), num(cf)),
        "mc exceeds det by more than 4 se",
    ))
}

fn zero_volatility(_: &Budget) -> Result<Check, CtdError> {
    let mut worst = 0.0f64;
    for name in ["experiment1", "experiment2"] {
        let model = bundled_model(name, &["model.spreads.0.xi=1e-7", "model.spreads.1.xi=1e-7"])?;
        let cf = ctd_common_factor(&model, 0.0, 10.0, settings())?;
        worst = worst.max((cf - ctd_deterministic(&model, 0.0, 10.0)?).abs());
    }
    Ok(Check::new(worst < 1e-6, format!("max |cf - det| = {}", num(worst)), "< 1e-6"))
}

fn report_for(name: &str) -> Result<(ExperimentConfig, MarketModel, HedgeReport), CtdError> {
    let cfg = bundled(name, &[])?;
    let model = cfg.model()?;
    let h = &cfg.hedge;
    let report = hedge_report(&model, cfg.horizon.t0, cfg.horizon.maturity, h.alpha0_policy, h.bound, cfg.cf_settings())?;
    Ok((cfg, model, report))
}

fn hedge_weights(_: &Budget) -> Result<Check, CtdError> {
    let mut ok = true;
    let mut measured = String::new();
    for (name, a1, a2) in [("experiment1", -0.477, -0.361), ("experiment2", -0.343, -0.436)] {
        let cfg = bundled(name, &[])?;
        let form = assemble_quadratic(&cfg.model()?, 0.0, 10.0, settings())?;
        let w = solve_min_variance(&form, cfg.hedge.alpha0_policy, cfg.hedge.bound)?;
        ok &= (w.alpha[1] - a1).abs() <= 0.05 && (w.alpha[2] - a2).abs() <= 0.05;
        let _ = write!(measured, "{name}: a1={} a2={}; ", num(w.alpha[1]), num(w.alpha[2]));
    }
    Ok(Check::new(ok, measured.trim_end_matches("; "), "within 0.05 of the quoted weights")
        .note("curves are read off figures"))
}

fn cash_neutral_alpha0(_: &Budget) -> Result<Check, CtdError> {
    let mut ok = true;
    let mut measured = String::new();
    for (name, target) in [("experiment1", -0.132), ("experiment2", -0.19)] {
        let (_, _, report) = report_for(name)?;
        let a0 = report.weights.alpha[0];
        ok &= report.weights.alpha0_degenerate && (a0 - target).abs() <= 0.03;
        let _ = write!(measured, "{name}: a0={}; ", num(a0));
    }
    Ok(Check::new(ok, measured.trim_end_matches("; "), "degenerate and within 0.03 of the quoted value"))
}

fn crossing_schedules(_: &Budget) -> Result<Check, CtdError> {
    let curves = |name: &str| -> Result<Vec<SpreadCurve>, CtdError> {
        let m = bundled_model(name, &[])?;
        Ok((0..=m.n_spreads()).map(|p| m.process(p).mean_curve().clone()).collect())
    };
    let s1 = crossing_schedule(&curves("experiment1")?, 0.0, 10.0)?;
    let s2 = crossing_schedule(&curves("experiment2")?, 0.0, 10.0)?;
    let ok1 = s1.times == [0.0] && s1.indices == [1];
    let ok2 = s2.times.len() == 2 && (s2.times[1] - 3.6).abs() <= 0.05 && s2.indices == [1, 2];
    Ok(Check::new(
        ok1 && ok2,
        format!("experiment1 {:?} {:?}; experiment2 {:?} {:?}", s1.times, s1.indices, s2.times, s2.indices),
        "{0}/(1) and {0, 3.6 +- 0.05}/(1, 2)",
    ))
}

fn portfolio_structure(_: &Budget) -> Result<Check, CtdError> {
    let mut ok = true;
    let mut measured = String::new();
    for (name, reduces_to) in [("experiment1", 1usize), ("experiment2", 2)] {
        let model = bundled_model(name, &[])?;
        let schedule = crossing_schedule(
            &(0..=model.n_spreads()).map(|p| model.process(p).mean_curve().clone()).collect::<Vec<_>>(),
            0.0,
            10.0,
        )?;
        let det = build_deterministic_portfolio(&model, &schedule, 0.0, 10.0, 0.9)?;
        let basic = build_basic_portfolio(&model, reduces_to, 0.0, 10.0, 0.9)?;
        let none = build_none_portfolio(&model, 0.0, 10.0, 0.9)?;
        let (a_det, a_basic, a_none) = (
            equivalent_alpha(&model, &det)?,
            equivalent_alpha(&model, &basic)?,
            equivalent_alpha(&model, &none)?,
        );
        let diff = a_det.iter().zip(&a_basic).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let mut unit = vec![0.0; a_basic.len()];
        unit[reduces_to] = -1.0;
        let basic_ok = a_basic.iter().zip(&unit).all(|(x, y)| (x - y).abs() < 1e-12);
        let none_ok = a_none[0] == -1.0 && a_none[1..].iter().all(|x| *x == 0.0);
        ok &= diff < 1e-12 && basic_ok && none_ok;
        let _ = write!(measured, "{name}: det vs basic{reduces_to} max diff {}; ", num(diff));
    }
    Ok(Check::new(
        ok,
        measured.trim_end_matches("; "),
        "det exposure equals the single short bond it reduces to; none shorts the domestic bond",
    ))
}

fn terminal_values(_: &Budget) -> Result<Check, CtdError> {
    let targets: [(&str, &[(&str, f64)]); 2] = [
        ("experiment1", &[("none", 0.045), ("det", 0.017), ("stoch", 0.025)]),
        ("experiment2", &[("none", 0.039), ("det", 0.021), ("stoch", 0.027), ("basic1", 0.025)]),
    ];
    let mut ok = true;
    let mut measured = String::new();
    for (name, list) in targets {
        let (_, _, report) = report_for(name)?;
        for (strategy, target) in list {
            let v = report
                .strategy(strategy)
                .and_then(|s| s.terminal_value)
                .ok_or_else(|| CtdError::numerical(format!("{name}: no terminal value for {strategy}")))?;
            ok &= (v - target).abs() <= 0.01;
            let _ = write!(measured, "{name} {strategy}={}; ", num(v));
        }
    }
    let check = Check::new(ok, measured.trim_end_matches("; "), "within 0.01 of the quoted values");
    Ok(if ok {
        check
    } else {
        check.note("a miss with the weight and dominance checks passing points at the curve constants read off the charts")
    })
}

fn variance_dominance(b: &Budget) -> Result<Check, CtdError> {
    let mut ok = true;
    let mut measured = String::new();
    for name in ["experiment1", "experiment2"] {
        let (cfg, model, report) = report_for(name)?;
        let mut plan = cfg.simulation_plan(cfg.horizon.maturity);
        plan.n_paths = b.hedge_paths;
        let bundle = simulate(&model, &plan)?;
        let portfolios: Vec<_> = ["none", "det", "stoch"]
            .iter()
            .map(|s| report.strategy(s).map(|x| x.portfolio.clone()).ok_or_else(|| CtdError::numerical("missing strategy")))
            .collect::<Result<_, _>>()?;
        let mut rev = cfg.hedge.revaluation();
        rev.sample_paths = 0;
        let ev = evaluate_portfolio_paths(&model, &portfolios, &bundle, &rev)?;
        let (none, det, stoch) = (&ev.portfolios[0], &ev.portfolios[1], &ev.portfolios[2]);
        let mut worst = f64::NEG_INFINITY;
        let mut nodes = 0;
        for (k, &t) in ev.times.iter().enumerate() {
            if t <= cfg.horizon.t0 + 1e-9 || t >= cfg.horizon.maturity - 1e-9 {
                continue;
            }
            nodes += 1;
            for other in [det, none] {
                let se = stoch.sd_stderr[k].hypot(other.sd_stderr[k]);
                let z = (stoch.sd[k] - other.sd[k]) / se.max(f64::MIN_POSITIVE);
                worst = worst.max(z);
                ok &= stoch.sd[k] <= other.sd[k] + 4.0 * se;
            }
        }
        let _ = write!(measured, "{name}: {nodes} nodes, max z(stoch - other)={worst:.2}; ");
    }
    Ok(Check::new(ok, measured.trim_end_matches("; "), "sd_stoch <= sd_other + 4 se at every interior node"))
}

fn conditional_pricer(b: &Budget) -> Result<Check, CtdError> {
    let cfg = bundled("experiment1", &[])?;
    let model = cfg.model()?;
    let (t, t_end) = (5.0, 10.0);
    let mut outer = SimulationPlan::new(b.outer_states, 48, t, 11);
    outer.record_every = outer.n_steps();
    let bundle = simulate(&model, &outer)?;
    let k = bundle.time_index(t)?;
    let mut worst = 0.0f64;
    let mut ok = true;
    for path in 0..bundle.n_paths {
        let mut u = vec![0.0; model.n_spreads() + 1];
        state_at(&model, &bundle, path, k, &mut u);
        let cf = conditional_ctd_term(&model, t, &u[1..], &[t_end], settings())?[0];
        let mut inner = SimulationPlan::new(b.inner_paths, 48, t_end, 1000 + path as u64);
        inner.start = t;
        inner.antithetic = true;
        inner.record_every = inner.n_steps();
        let e = mc_ctd(&simulate_from(&model, &inner, &u)?, t, t_end)?;
        let (pass, z) = within(cf, &e, 4.0, 1e-4);
        ok &= pass;
        worst = worst.max(z.abs());
    }
    Ok(Check::new(ok, format!("{} states, max |z| = {worst:.2}", bundle.n_paths), "|cf - mc| <= 4 se + 1e-4 per state"))
}

fn instruments_mc(b: &Budget) -> Result<Check, CtdError> {
    let cfg = bundled("swap_pnl", &[])?;
    let model = cfg.model()?;
    let bundle = simulate(&model, &endpoint_plan(&cfg, b.oracle_paths / 2, 10.0))?;
    let mut ok = true;
    let mut measured = String::new();
    for i in 0..=model.n_spreads() {
        let price = if i == 0 {
            zcb_domestic(&model, 0.0, 10.0)?
        } else {
            zcb_foreign(&model, i, 0.0, 10.0)?
        };
        let e = mc_expectation(&bundle, Payoff::Bond(i), 0.0, 10.0)?;
        let (pass, z) = within(price, &e, 3.0, 0.0);
        ok &= pass;
        let _ = write!(measured, "bond{i} z={z:.2}; ");
    }
    let fwd = forward_bond(&model, &ForwardBondContract::new(1, 3.6, 10.0)?, 0.0)?;
    let ratio = zcb_foreign(&model, 1, 0.0, 10.0)? / zcb_domestic(&model, 0.0, 3.6)?;
    let ratio_err = ((fwd - ratio) / ratio).abs();
    ok &= ratio_err < 1e-14;
    let _ = write!(measured, "forward ratio rel err {}", num(ratio_err));
    Ok(Check::new(ok, measured, "bond |z| <= 3; forward equals the bond ratio"))
}

fn swap_identities(_: &Budget) -> Result<Check, CtdError> {
    let mut flat = bundled("swap_pnl", &[])?;
    flat.model.domestic.xi = 0.0;
    let model = flat.model()?;
    let spec = SwapSpec::regular(1.0, 0.0, 0.0, 1.0, 10, true)?;
    let v = swap_value(&model, &spec, 0.0)?;
    let telescoped = 1.0 - zcb_domestic(&model, 0.0, 10.0)?;
    let mut err = (v - telescoped).abs();
    for k in 1..=10 {
        let (a, c) = ((k - 1) as f64, k as f64);
        let l = forward_ibor(&model, 0.0, a, c)?;
        let direct = (zcb_domestic(&model, 0.0, a)? / zcb_domestic(&model, 0.0, c)? - 1.0) / (c - a);
        err = err.max((l - direct).abs());
    }
    Ok(Check::new(err < 1e-14, format!("max error = {}", num(err)), "< 1e-14"))
}

fn swap_ctd_ordering(_: &Budget) -> Result<Check, CtdError> {
    let cfg = bundled("swap_pnl", &[])?;
    let model = cfg.model()?;
    let spec = cfg.swap()?;
    let det = ctd_factors(&model, 0.0, &spec.payment_dates, CtdMethod::Deterministic, settings())?;
    let cf = ctd_factors(&model, 0.0, &spec.payment_dates, CtdMethod::CommonFactor, settings())?;
    let factors_ok = det.iter().zip(&cf).all(|(d, c)| *c <= *d + 1e-12);
    let v_det = swap_value_ctd(&model, &spec, 0.0, CtdMethod::Deterministic)?;
    let v_cf = swap_value_ctd(&model, &spec, 0.0, CtdMethod::CommonFactor)?;
    let v_none = swap_value_ctd(&model, &spec, 0.0, CtdMethod::None)?;
    let plain = swap_value(&model, &spec, 0.0)?;
    let ok = factors_ok && (v_none - plain).abs() < 1e-9 * spec.notional;
    Ok(Check::new(
        ok,
        format!("V none={} det={} cf={}", num(v_none), num(v_det), num(v_cf)),
        "cf factor <= det factor per date; method none equals the plain swap",
    ))
}

fn sensitivity_closed_form(_: &Budget) -> Result<Check, CtdError> {
    let model = bundled_model("fig5_sensitivity", &["model.spreads.1.curve.values=[0.005, 0.005]"])?;
    let t_end = 20.0;
    let req = BumpRequest::new(BumpTarget::MeanLevel(1), 1e-4)?;
    let s = ctd_sensitivity(&model, 0.0, t_end, req, SensitivityMethod::Deterministic, settings())?;
    let exact = -t_end * ctd_deterministic(&model, 0.0, t_end)?;
    let rel = ((s.value - exact) / exact).abs();
    let h = 1e-4 * t_end;
    let bound = h.sinh() / h - 1.0;
    Ok(Check::new(
        (rel - bound).abs() < 1e-8,
        format!("fd={} exact={} rel={}", num(s.value), num(exact), num(rel)),
        format!("rel error equals the central-difference truncation {} to 1e-8", num(bound)),
    ))
}

fn level_sensitivity_structure(_: &Budget) -> Result<Check, CtdError> {
    let cfg = bundled("fig5_sensitivity", &[])?;
    let model = cfg.model()?;
    let (sweep, values, targets) = cfg.sweep()?;
    let (t0, t_end) = (cfg.horizon.t0, cfg.horizon.maturity);
    let rows = sensitivity_profile(&model, t0, t_end, sweep, &values, &targets, cfg.sensitivity.epsilon, cfg.cf_settings())?;
    let q1 = model.process(1).mean_curve().at(t0);
    let eps = cfg.sensitivity.epsilon;
    // Central difference of exp(-x (T - t0)): relative error sinh(h)/h - 1 with h = eps (T - t0).
    let h = eps * (t_end - t0);
    let truncation = 1.01 * h * h / 6.0 + 1e-10;
    let mut det_ok = true;
    let mut cf_neg = true;
    let mut det_level_ok = true;
    let mut cf_decreasing = true;
    let mut crossing = None;
    for (k, r) in rows.iter().enumerate() {
        let (d, c) = r.derivatives[0];
        if r.parameter + eps < q1 {
            det_ok &= d == 0.0;
            det_level_ok &= (r.ctd_det - rows[0].ctd_det).abs() == 0.0;
        } else if r.parameter - eps > q1 {
            let exact = -(t_end - t0) * r.ctd_det;
            det_ok &= ((d - exact) / exact).abs() <= truncation;
            det_level_ok &= k == 0 || r.ctd_det < rows[k - 1].ctd_det;
        }
        cf_neg &= c < 0.0;
        cf_decreasing &= k == 0 || r.ctd_cf < rows[k - 1].ctd_cf;
        if crossing.is_none() && k > 0 {
            let prev = rows[k - 1].derivatives[0];
            if (prev.1 - prev.0) * (c - d) < 0.0 {
                crossing = Some(0.5 * (rows[k - 1].parameter + r.parameter));
            }
        }
    }
    let step = (values[1] - values[0]).abs();
    let cross_ok = crossing.is_some_and(|x| (x - q1).abs() <= 2.0 * step);
    Ok(Check::new(
        det_ok && cf_neg && det_level_ok && cf_decreasing && cross_ok,
        format!(
            "det derivative structure {det_ok}; det level flat then decreasing {det_level_ok}; cf derivative < 0 {cf_neg}; cf decreasing {cf_decreasing}; derivative crossing at {}",
            crossing.map(num).unwrap_or_else(|| "none".into())
        ),
        format!("crossing within {} of {}", num(2.0 * step), num(q1)),
    ))
}

fn xi_sensitivity_gap(_: &Budget) -> Result<Check, CtdError> {
    let cfg = bundled("fig2_sensitivity", &[])?;
    let model = cfg.model()?;
    let (sweep, values, targets) = cfg.sweep()?;
    let rows = sensitivity_profile(
        &model,
        cfg.horizon.t0,
        cfg.horizon.maturity,
        sweep,
        &values,
        &targets,
        cfg.sensitivity.epsilon,
        cfg.cf_settings(),
    )?;
    let gaps: Vec<f64> = rows.iter().map(|r| (r.derivatives[0].1 - r.derivatives[1].1).abs()).collect();
    let ok = gaps.windows(2).all(|w| w[1] < w[0]);
    Ok(Check::new(
        ok && matches!(sweep, SweepParameter::XiAll),
        format!("gap first={} last={}", num(gaps[0]), num(*gaps.last().unwrap())),
        "|dCTD/dxi1 - dCTD/dxi2| strictly decreasing along the sweep",
    ))
}

fn swap_pnl_ordering(b: &Budget) -> Result<Check, CtdError> {
    let cfg = bundled("swap_pnl", &[])?;
    let model = cfg.model()?;
    let swap = cfg.swap()?;
    let mut plan = cfg.simulation_plan(cfg.horizon.maturity);
    plan.n_paths = b.pnl_paths;
    let bundle = simulate(&model, &plan)?;
    let step = cfg.simulate_pnl.rebalance_step;
    let grid: Vec<f64> = bundle
        .times
        .iter()
        .copied()
        .filter(|t| ((t / step).round() * step - t).abs() < 1e-9 && *t <= swap.maturity() + 1e-9)
        .collect();
    let methods = [CtdMethod::None, CtdMethod::Deterministic, CtdMethod::CommonFactor];
    let d = synthetic_replication_pnl(&model, &swap, &methods, &bundle, &grid, &cfg.hedge.revaluation())?;
    let ok = d[2].sd < d[1].sd && d[1].sd < d[0].sd;
    Ok(Check::new(
        ok,
        format!("sd none={} det={} cf={}", num(d[0].sd), num(d[1].sd), num(d[2].sd)),
        "sd cf < sd det < sd none",
    ))
}

fn thread_determinism(b: &Budget) -> Result<Check, CtdError> {
    let paths = (b.hedge_paths / 10).max(500).to_string();
    let cfg = bundled("experiment2", &[&format!("simulation.paths={paths}"), "hedge.sample_paths=3"])?;
    let mut outputs = Vec::new();
    for threads in [1, 2] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CtdError::numerical(e.to_string()))?;
        let out = pool.install(|| run(&cfg, CommandKind::Hedge, RunOptions::default()));
        outputs.push(out.map_err(|e| CtdError::numerical(e.to_string()))?.artifacts);
    }
    let same = outputs[0] == outputs[1];
    Ok(Check::new(
        same,
        format!("{} artifacts, identical: {same}", outputs[0].len()),
        "byte-identical artifacts on 1 and 2 threads",
    ))
}

fn suite_filters(_: &Budget) -> Result<Check, CtdError> {
    let ids = |f: &str| select(f).iter().map(|c| c.id).collect::<Vec<_>>();
    let jensen = ids("jensen");
    let oracles = ids("moment-oracles");
    let reference = ids("reference-values");
    let ok = jensen == ["jensen-ordering", "jensen-counterexample"]
        && oracles.contains(&"quadratic-vs-mc")
        && oracles.contains(&"integral-covariance-quadrature")
        && reference.contains(&"hedge-weights")
        && reference.contains(&"terminal-values")
        && ids("A5").len() == 2
        && uncovered().is_empty();
    Ok(Check::new(ok, format!("jensen {jensen:?}; moment-oracles {}; reference-values {}", oracles.len(), reference.len()), "filters select their cases; coverage complete"))
}

pub static CASES: &[ValidationCase] = &[
    ValidationCase {
        id: "theta-calibration",
        description: "piecewise theta reproduces the mean curve at every node of a 120-node 10y grid",
        claim: "a piecewise-constant drift can be chosen so the spread mean matches the forecast at each grid node",
        operations: &["theta_piecewise"],
        criterion: "max |E[q(t_k)] - q_hat(t_k)| < 1e-12",
        source: Source::Oracle,
        groups: &["acceptance"],
        run: theta_calibration,
    },
    ValidationCase {
        id: "theta-continuous",
        description: "continuous theta drives the mean ODE onto the forecast curve",
        claim: "the drift q_hat' + kappa q_hat makes the mean equal the forecast",
        operations: &["theta_continuous", "spread_mean"],
        criterion: "RK4 solution within 1e-10 of the curve",
        source: Source::Oracle,
        groups: &[],
        run: theta_continuous_ode,
    },
    ValidationCase {
        id: "ou-moments",
        description: "simulated spread covariances match the closed forms",
        claim: "spreads are Gaussian with the Hull-White covariance",
        operations: &["simulate", "spread_cross_covariance"],
        criterion: "|z| <= 4",
        source: Source::Oracle,
        groups: &["moment-oracles"],
        run: ou_moments_mc,
    },
    ValidationCase {
        id: "integral-covariance-quadrature",
        description: "closed-form covariance of spread integrals against 400x400 quadrature",
        claim: "the covariance of time integrals is the double integral of the pointwise covariance",
        operations: &["integral_covariance", "spread_cross_covariance"],
        criterion: "relative error < 1e-6",
        source: Source::Oracle,
        groups: &["moment-oracles", "acceptance"],
        run: integral_covariance_quadrature,
    },
    ValidationCase {
        id: "bond-moments",
        description: "bond moments and the joint bond moment against Monte Carlo",
        claim: "log-normal bond moments follow from the integral variances",
        operations: &["bond_moment", "joint_bond_moment", "mc_expectation"],
        criterion: "|z| <= 3",
        source: Source::Oracle,
        groups: &["moment-oracles"],
        run: bond_moments_mc,
    },
    ValidationCase {
        id: "shifted-max",
        description: "shifted maximum expectation against Monte Carlo",
        claim: "the collateral bond times a foreign bond is a CTD-type expectation under tilted means",
        operations: &["shifted_max_ctd", "mc_expectation"],
        criterion: "|cf - mc| <= 3 se + 2e-4",
        source: Source::Oracle,
        groups: &["moment-oracles"],
        run: shifted_max_mc,
    },
    ValidationCase {
        id: "quadratic-vs-mc",
        description: "every entry of the hedge quadratic form against Monte Carlo covariances",
        claim: "the hedge variance is a quadratic in the weights with analytic coefficients",
        operations: &["assemble_quadratic", "mc_expectation", "simulate"],
        criterion: "every |z| <= 3",
        source: Source::Oracle,
        groups: &["moment-oracles", "acceptance"],
        run: quadratic_vs_mc,
    },
    ValidationCase {
        id: "gamma-fit",
        description: "fitted common-factor weight reproduces the off-diagonal covariance for two spreads",
        claim: "for two spreads the common factor matches the covariance exactly",
        operations: &["fit_gamma"],
        criterion: "|gamma s_min^2 - s12| < 1e-12",
        source: Source::Oracle,
        groups: &[],
        run: gamma_fit,
    },
    ValidationCase {
        id: "max-moments",
        description: "moments and CDF of the floored maximum",
        claim: "the maximum's distribution is a convolution of the common and idiosyncratic factors",
        operations: &["max_moments", "max_cdf", "simulate"],
        criterion: "closed form to 1e-12; MC |z| <= 3; CDF inside the DKW band",
        source: Source::Oracle,
        groups: &[],
        run: max_moments_checks,
    },
    ValidationCase {
        id: "integral-variance-polynomials",
        description: "integral-variance estimator on constant and linear variance curves",
        claim: "the estimator integrates the marginal variance twice",
        operations: &["integral_variance_estimator"],
        criterion: "exact to 1e-14",
        source: Source::Oracle,
        groups: &[],
        run: integral_variance_polynomials,
    },
    ValidationCase {
        id: "deterministic-crossing",
        description: "deterministic CTD with forecasts crossing at 3.6 against a Riemann sum",
        claim: "with no volatility the CTD factor discounts at the running maximum forecast",
        operations: &["ctd_deterministic"],
        criterion: "relative error < 1e-9",
        source: Source::Oracle,
        groups: &[],
        run: deterministic_crossing,
    },
    ValidationCase {
        id: "cf-vs-mc-volatility-sweep",
        description: "common-factor CTD inside the Monte Carlo 99% band for the volatility-sweep model",
        claim: "the second-order common-factor approximation is accurate at realistic volatilities",
        operations: &["ctd_common_factor", "mc_ctd", "simulate"],
        criterion: "|z| <= 2.576",
        source: Source::Oracle,
        groups: &["acceptance"],
        run: cf_vs_mc,
    },
    ValidationCase {
        id: "jensen-ordering",
        description: "common-factor CTD bounded by the deterministic CTD over 200 random models",
        claim: "stochastic spreads make the collateral option worth at least its deterministic value",
        operations: &["ctd_common_factor", "ctd_deterministic"],
        criterion: "no model with cf > det + 1e-8",
        source: Source::Reference,
        groups: &["jensen", "acceptance"],
        run: jensen_ordering,
    },
    ValidationCase {
        id: "jensen-counterexample",
        description: "Monte Carlo truth above the deterministic CTD for a single high spread",
        claim: "convexity of the exponential can outweigh the option value",
        operations: &["mc_ctd", "ctd_deterministic", "ctd_common_factor"],
        criterion: "mc - det > 4 se",
        source: Source::Oracle,
        groups: &["jensen"],
        run: jensen_counterexample,
    },
    ValidationCase {
        id: "zero-volatility-collapse",
        description: "with xi = 1e-7 the common-factor CTD equals the deterministic one",
        claim: "spreads collapse onto their forecasts as volatility vanishes",
        operations: &["ctd_common_factor", "ctd_deterministic", "integral_variance_estimator"],
        criterion: "|cf - det| < 1e-6",
        source: Source::Reference,
        groups: &["acceptance"],
        run: zero_volatility,
    },
    ValidationCase {
        id: "hedge-weights",
        description: "minimum-variance weights for both hedging experiments",
        claim: "the optimal static hedge shorts roughly half a unit of each foreign bond",
        operations: &["assemble_quadratic", "solve_min_variance"],
        criterion: "within 0.05 of (-0.477, -0.361) and (-0.343, -0.436)",
        source: Source::Reference,
        groups: &["reference-values", "acceptance"],
        run: hedge_weights,
    },
    ValidationCase {
        id: "cash-neutral-alpha0",
        description: "cash-neutral domestic weight for both experiments",
        claim: "the domestic weight is free when the domestic rate is deterministic",
        operations: &["solve_min_variance"],
        criterion: "within 0.03 of -0.132 and -0.19",
        source: Source::Reference,
        groups: &["reference-values"],
        run: cash_neutral_alpha0,
    },
    ValidationCase {
        id: "crossing-schedule",
        description: "crossing schedules of the two hedging experiments",
        claim: "forecasts of experiment one never cross; those of experiment two cross once",
        operations: &["crossing_schedule"],
        criterion: "{0}/(1) and {0, 3.6}/(1, 2)",
        source: Source::Reference,
        groups: &["reference-values"],
        run: crossing_schedules,
    },
    ValidationCase {
        id: "portfolio-structure",
        description: "deterministic, basic and none portfolios have the expected exposures",
        claim: "with a zero domestic rate the deterministic strategy reduces to a basic one",
        operations: &["build_deterministic_portfolio", "build_basic_portfolio", "build_none_portfolio"],
        criterion: "exposures equal to 1e-12",
        source: Source::Reference,
        groups: &[],
        run: portfolio_structure,
    },
    ValidationCase {
        id: "terminal-values",
        description: "terminal portfolio values of both experiments",
        claim: "imperfect hedges carry a deterministic terminal cost",
        operations: &["build_deterministic_portfolio", "build_basic_portfolio", "build_none_portfolio"],
        criterion: "within 0.01 of the quoted values",
        source: Source::Reference,
        groups: &["reference-values", "acceptance"],
        run: terminal_values,
    },
    ValidationCase {
        id: "variance-dominance",
        description: "stochastic strategy has the smallest standard deviation along the paths",
        claim: "the variance-minimising hedge beats the deterministic and unhedged strategies at every date",
        operations: &["evaluate_portfolio_paths", "simulate"],
        criterion: "sd_stoch <= sd_det, sd_none + 4 se at interior nodes",
        source: Source::Reference,
        groups: &["acceptance"],
        run: variance_dominance,
    },
    ValidationCase {
        id: "conditional-pricer",
        description: "conditional CTD revaluation against nested Monte Carlo",
        claim: "re-anchoring the common-factor pricer at the simulated state prices the remaining option",
        operations: &["evaluate_portfolio_paths", "ctd_common_factor", "mc_ctd"],
        criterion: "|cf - mc| <= 4 se + 1e-4 at each outer state",
        source: Source::Oracle,
        groups: &[],
        run: conditional_pricer,
    },
    ValidationCase {
        id: "bond-prices",
        description: "zero-coupon and forward bond prices",
        claim: "bond prices are expectations of discounted unit payoffs",
        operations: &["zcb_domestic", "zcb_foreign", "forward_bond", "mc_expectation"],
        criterion: "|z| <= 3; forward ratio exact",
        source: Source::Oracle,
        groups: &[],
        run: instruments_mc,
    },
    ValidationCase {
        id: "swap-identities",
        description: "zero-strike swap telescopes; IBOR forwards from bond ratios",
        claim: "a floating leg is worth the notional minus the final bond",
        operations: &["swap_value", "forward_ibor", "zcb_domestic"],
        criterion: "exact to 1e-14",
        source: Source::Oracle,
        groups: &[],
        run: swap_identities,
    },
    ValidationCase {
        id: "swap-ctd-ordering",
        description: "CTD-discounted swap legs under the three schemes",
        claim: "volatility raises the CTD discount for spreads close together",
        operations: &["swap_value_ctd", "swap_value"],
        criterion: "cf factor <= det factor per payment date",
        source: Source::Oracle,
        groups: &[],
        run: swap_ctd_ordering,
    },
    ValidationCase {
        id: "level-sensitivity-closed-form",
        description: "deterministic level sensitivity of the everywhere-maximal spread",
        claim: "bumping the binding forecast moves the deterministic factor by -(T - t0) CTD",
        operations: &["ctd_sensitivity"],
        criterion: "relative error < 1e-6",
        source: Source::Oracle,
        groups: &[],
        run: sensitivity_closed_form,
    },
    ValidationCase {
        id: "level-sensitivity-structure",
        description: "level sweep of the second spread: deterministic kink against smooth common-factor response",
        claim: "the deterministic factor ignores a spread until it becomes the maximum; the stochastic one always reacts",
        operations: &["sensitivity_profile", "ctd_sensitivity"],
        criterion: "det derivative 0 then -(T-t0) CTD; cf derivative < 0; crossing near q1",
        source: Source::Reference,
        groups: &["acceptance"],
        run: level_sensitivity_structure,
    },
    ValidationCase {
        id: "volatility-sensitivity-gap",
        description: "difference of the two volatility sensitivities shrinks as volatility grows",
        claim: "at high volatility it matters less which spread is bumped",
        operations: &["sensitivity_profile"],
        criterion: "strictly decreasing",
        source: Source::Reference,
        groups: &[],
        run: xi_sensitivity_gap,
    },
    ValidationCase {
        id: "swap-pnl-ordering",
        description: "hedged swap P&L spread under the three CTD schemes",
        claim: "a better synthetic CTD factor gives a tighter replication P&L",
        operations: &["synthetic_replication_pnl", "swap_value_ctd", "simulate"],
        criterion: "sd cf < sd det < sd none",
        source: Source::Oracle,
        groups: &["acceptance"],
        run: swap_pnl_ordering,
    },
    ValidationCase {
        id: "thread-determinism",
        description: "hedge command artifacts on one and two threads",
        claim: "results depend on the seed only",
        operations: &["run"],
        criterion: "byte-identical",
        source: Source::Plumbing,
        groups: &["acceptance"],
        run: thread_determinism,
    },
    ValidationCase {
        id: "suite-filters",
        description: "suite filters and operation coverage",
        claim: "every operation is exercised by a case",
        operations: &["run_suite"],
        criterion: "filters select their cases; no uncovered operation",
        source: Source::Plumbing,
        groups: &[],
        run: suite_filters,
    },
];

/// Operations with no case.
pub fn uncovered() -> Vec<&'static str> {
    OPERATIONS
        .iter()
        .copied()
        .filter(|op| !CASES.iter().any(|c| c.operations.contains(op)))
        .collect()
}

/// Cases selected by `filter`: `all`, a group name, a criterion id such as
/// `A5`, or a case id.
pub fn select(filter: &str) -> Vec<&'static ValidationCase> {
    let by_criterion = CRITERIA.iter().find(|(id, _)| id.eq_ignore_ascii_case(filter));
    CASES
        .iter()
        .filter(|c| match filter {
            "all" => true,
            _ => {
                c.id == filter
                    || c.groups.contains(&filter)
                    || by_criterion.is_some_and(|(_, ids)| ids.contains(&c.id))
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub id: &'static str,
    pub source: Source,
    pub criterion: &'static str,
    pub check: Result<Check, String>,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        matches!(&self.check, Ok(c) if c.passed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub filter: String,
    pub results: Vec<CaseResult>,
    pub uncovered: Vec<&'static str>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        !self.results.is_empty() && self.uncovered.is_empty() && self.results.iter().all(CaseResult::passed)
    }

    pub fn result(&self, id: &str) -> Option<&CaseResult> {
        self.results.iter().find(|r| r.id == id)
    }

    /// Pass/fail per acceptance criterion among the cases that ran.
    pub fn criteria(&self) -> Vec<(&'static str, bool)> {
        CRITERIA
            .iter()
            .filter_map(|(id, cases)| {
                let rs: Vec<_> = cases.iter().filter_map(|c| self.result(c)).collect();
                (rs.len() == cases.len()).then(|| (*id, rs.iter().all(|r| r.passed())))
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let _ = w.write_record(["id", "status", "source", "criterion", "measured", "tolerance", "note"]);
        for r in &self.results {
            let (status, measured, tol, note) = match &r.check {
                Ok(c) => (if c.passed { "pass" } else { "fail" }, c.measured.as_str(), c.tolerance.as_str(), c.note.as_str()),
                Err(e) => ("error", "", "", e.as_str()),
            };
            let _ = w.write_record([r.id, status, r.source.name(), r.criterion, measured, tol, note]);
        }
        for op in &self.uncovered {
            let _ = w.write_record(["coverage", "fail", "plumbing", "operation has a case", op, "", ""]);
        }
        String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.results {
            match &r.check {
                Ok(c) => {
                    let _ = writeln!(s, "{} {}: {} [{}]", if c.passed { "PASS" } else { "FAIL" }, r.id, c.measured, c.tolerance);
                    if !c.note.is_empty() {
                        let _ = writeln!(s, "     note: {}", c.note);
                    }
                }
                Err(e) => {
                    let _ = writeln!(s, "ERROR {}: {e}", r.id);
                }
            }
        }
        for op in &self.uncovered {
            let _ = writeln!(s, "FAIL coverage: no case exercises {op}");
        }
        for (id, ok) in self.criteria() {
            let known = if !ok && KNOWN_UNATTAINABLE.contains(&id) { " (known unattainable)" } else { "" };
            let _ = writeln!(s, "{id} {}{known}", if ok { "PASS" } else { "FAIL" });
        }
        let passed = self.results.iter().filter(|r| r.passed()).count();
        let _ = writeln!(s, "{passed}/{} cases passed", self.results.len());
        s
    }
}

/// Runs the cases selected by `filter` in parallel; results keep registry
/// order.
pub fn run_suite(filter: &str, budget: &Budget) -> SuiteReport {
    let cases = select(filter);
    let results = cases
        .par_iter()
        .map(|c| CaseResult {
            id: c.id,
            source: c.source,
            criterion: c.criterion,
            check: (c.run)(budget).map_err(|e| e.to_string()),
        })
        .collect();
    SuiteReport {
        filter: filter.to_string(),
        results,
        uncovered: uncovered(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_operation_has_a_case() {
        assert!(uncovered().is_empty(), "{:?}", uncovered());
    }

    #[test]
    fn ids_are_unique_and_criteria_resolve() {
        let mut ids: Vec<_> = CASES.iter().map(|c| c.id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), CASES.len());
        for (_, cases) in CRITERIA {
            for c in *cases {
                assert!(CASES.iter().any(|x| x.id == *c), "{c}");
            }
        }
        assert!(CASES.iter().all(|c| !c.operations.is_empty()));
    }

    #[test]
    fn cheap_cases_pass() {
        let b = Budget::quick();
        for id in [
            "theta-calibration",
            "theta-continuous",
            "integral-covariance-quadrature",
            "gamma-fit",
            "integral-variance-polynomials",
            "deterministic-crossing",
            "zero-volatility-collapse",
            "hedge-weights",
            "cash-neutral-alpha0",
            "crossing-schedule",
            "portfolio-structure",
            "swap-identities",
            "swap-ctd-ordering",
            "level-sensitivity-closed-form",
            "suite-filters",
        ] {
            let r = run_suite(id, &b);
            assert!(r.passed(), "{}", r.to_text());
        }
    }
}
