//! Statistical and numerical oracles for the engine.

use ctd_core::ctd_engine::{ctd_deterministic, max_cdf, CfSettings, CommonFactorState};
use ctd_core::curve::SpreadCurve;
use ctd_core::hedging::{assemble_quadratic, solve_min_variance, Alpha0Policy};
use ctd_core::montecarlo::{covariance_estimate, mc_covariance, mc_ctd, payoff_samples, simulate, Payoff, SimulationPlan};
use ctd_core::sensitivity::{
    ctd_sensitivity, sensitivity_profile, BumpRequest, BumpTarget, SensitivityMethod, SweepParameter,
};
use ctd_core::spread_model::{CorrelationMatrix, HullWhiteSpec, MarketModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn hedging_model() -> MarketModel {
    let lin = |a, b| SpreadCurve::linear(0.0, 10.0, a, b).unwrap();
    MarketModel::new(
        HullWhiteSpec::new(0.1, 0.0, SpreadCurve::constant(0.0, 10.0, 0.0).unwrap()).unwrap(),
        vec![
            HullWhiteSpec::new(0.0078, 0.0018, lin(0.00315, 0.00262)).unwrap(),
            HullWhiteSpec::new(0.0076, 0.0023, lin(0.0023, 0.00154)).unwrap(),
        ],
        CorrelationMatrix::two_spreads(0.3).unwrap(),
    )
    .unwrap()
}

fn sensitivity_model(q2: f64) -> MarketModel {
    MarketModel::new(
        HullWhiteSpec::new(0.1, 0.0, SpreadCurve::constant(0.0, 20.0, 0.0).unwrap()).unwrap(),
        vec![
            HullWhiteSpec::new(0.0078, 0.0018, SpreadCurve::constant(0.0, 20.0, 0.014).unwrap()).unwrap(),
            HullWhiteSpec::new(0.0076, 0.0023, SpreadCurve::constant(0.0, 20.0, q2).unwrap()).unwrap(),
        ],
        CorrelationMatrix::two_spreads(0.5).unwrap(),
    )
    .unwrap()
}

fn endpoint_plan(n: usize, spy: usize, horizon: f64, seed: u64, antithetic: bool) -> SimulationPlan {
    let mut p = SimulationPlan::new(n, spy, horizon, seed);
    p.antithetic = antithetic;
    p.record_every = p.n_steps();
    p
}

#[test]
fn predicted_hedge_variance_matches_realized() {
    let model = hedging_model();
    let form = assemble_quadratic(&model, 0.0, 10.0, CfSettings::default()).unwrap();
    let bundle = simulate(&model, &endpoint_plan(1_000_000, 48, 10.0, 31, true)).unwrap();
    let var_pc = mc_covariance(&bundle, Payoff::CollateralBond, Payoff::CollateralBond, 0.0, 10.0).unwrap();
    let form = form.with_constant(var_pc.mean);
    let w = solve_min_variance(&form, Alpha0Policy::CashNeutral, 1.0).unwrap();
    let mut pi = payoff_samples(&bundle, Payoff::CollateralBond, 0.0, 10.0).unwrap();
    for i in 1..=2 {
        let q = payoff_samples(&bundle, Payoff::Bond(i), 0.0, 10.0).unwrap();
        pi.iter_mut().zip(&q).for_each(|(p, b)| *p += w.alpha[i] * b);
    }
    let realized = covariance_estimate(&pi, &pi, true);
    let predicted = w.predicted_variance.unwrap();
    let z = (predicted - realized.mean) / realized.stderr;
    assert!(z.abs() <= 4.0, "predicted {predicted:e} realized {:e} z {z:.2}", realized.mean);
    assert!(predicted < var_pc.mean);
}

#[test]
fn antithetic_pairs_leave_the_mean_unbiased() {
    let model = sensitivity_model(0.0133);
    let a = mc_ctd(&simulate(&model, &endpoint_plan(100_000, 48, 20.0, 5, true)).unwrap(), 0.0, 20.0).unwrap();
    let b = mc_ctd(&simulate(&model, &endpoint_plan(100_000, 48, 20.0, 6, false)).unwrap(), 0.0, 20.0).unwrap();
    let se = a.stderr.hypot(b.stderr);
    assert!((a.mean - b.mean).abs() <= 4.0 * se, "{a:?} {b:?}");
    assert!(a.stderr < b.stderr);
}

#[test]
fn doubling_the_step_count_moves_mc_ctd_by_less_than_one_se() {
    let model = sensitivity_model(0.0133);
    let coarse = mc_ctd(&simulate(&model, &endpoint_plan(100_000, 40, 20.0, 8, true)).unwrap(), 0.0, 20.0).unwrap();
    let fine = mc_ctd(&simulate(&model, &endpoint_plan(100_000, 80, 20.0, 8, true)).unwrap(), 0.0, 20.0).unwrap();
    assert!((coarse.mean - fine.mean).abs() < fine.stderr, "{coarse:?} {fine:?}");
}

#[test]
fn zero_domestic_rate_keeps_the_cash_account_flat() {
    let model = hedging_model();
    let mut plan = SimulationPlan::new(200, 48, 10.0, 3);
    plan.record_every = 12;
    let bundle = simulate(&model, &plan).unwrap();
    for path in 0..bundle.n_paths {
        for k in 0..bundle.times.len() {
            assert_eq!(bundle.integral(path, k, 0), 0.0);
        }
    }
}

#[test]
fn central_difference_error_is_second_order() {
    // Deterministic level bump on the maximal spread: exact slope -(T - t0) CTD.
    let model = sensitivity_model(0.005);
    let exact = -20.0 * ctd_deterministic(&model, 0.0, 20.0).unwrap();
    let err = |eps: f64| {
        let req = BumpRequest::new(BumpTarget::MeanLevel(1), eps).unwrap();
        ctd_sensitivity(&model, 0.0, 20.0, req, SensitivityMethod::Deterministic, CfSettings::default())
            .unwrap()
            .value
            - exact
    };
    let ratio = err(2e-3) / err(1e-3);
    assert!((3.0..=5.0).contains(&ratio), "{ratio}");
}

#[test]
fn volatility_sensitivities_are_non_positive() {
    let model = sensitivity_model(0.0133);
    let values: Vec<f64> = (2..=20).map(|k| k as f64 * 0.0005).collect();
    let targets = [BumpTarget::Xi(1), BumpTarget::Xi(2)];
    let rows = sensitivity_profile(&model, 0.0, 20.0, SweepParameter::XiAll, &values, &targets, 1e-4, CfSettings::default())
        .unwrap();
    for r in &rows {
        for (det, cf) in &r.derivatives {
            assert_eq!(*det, 0.0);
            assert!(*cf <= 0.0, "{} {cf}", r.parameter);
        }
    }
}

#[test]
fn non_maximal_level_has_no_deterministic_sensitivity() {
    let model = sensitivity_model(0.01);
    let req = BumpRequest::new(BumpTarget::MeanLevel(2), 1e-4).unwrap();
    let s = ctd_sensitivity(&model, 0.0, 20.0, req, SensitivityMethod::Deterministic, CfSettings::default()).unwrap();
    assert_eq!(s.value, 0.0);
}

/// `P(max(0, C + A_i) <= x)` by brute-force quadrature over the common factor.
fn cdf_by_quadrature(means: &[f64], vars: &[f64], common: f64, x: f64) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    let sd = common.sqrt();
    let n = 20_000;
    let (lo, hi) = (-9.0, 9.0);
    let h = (hi - lo) / n as f64;
    let phi = |z: f64| libm::erfc(-z / std::f64::consts::SQRT_2) / 2.0;
    (0..=n)
        .map(|k| {
            let z = lo + k as f64 * h;
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            let c = sd * z;
            let p: f64 = means.iter().zip(vars).map(|(m, v)| phi((x - c - m) / v.sqrt())).product();
            w * h * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt() * p
        })
        .sum()
}

#[test]
fn max_cdf_matches_quadrature_and_samples() {
    let means = vec![0.012, 0.011, 0.004];
    let vars = vec![4e-6, 9e-6, 1e-6];
    let common = 3e-6;
    let state = CommonFactorState::from_parts(means.clone(), vars.clone(), common, true).unwrap();
    let xs: Vec<f64> = (0..1000).map(|k| -0.002 + 0.03 * k as f64 / 999.0).collect();
    let worst_quad = xs
        .iter()
        .map(|&x| (max_cdf(&state, x) - cdf_by_quadrature(&means, &vars, common, x)).abs())
        .fold(0.0, f64::max);
    assert!(worst_quad < 1e-6, "{worst_quad:e}");

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 1_000_000;
    let mut samples: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            let c = common.sqrt() * z;
            means
                .iter()
                .zip(&vars)
                .map(|(m, v)| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    c + m + v.sqrt() * e
                })
                .fold(0.0, f64::max)
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    let worst_emp = xs
        .iter()
        .map(|&x| (max_cdf(&state, x) - samples.partition_point(|s| *s <= x) as f64 / n as f64).abs())
        .fold(0.0, f64::max);
    let dkw = ((2.0f64 / 1e-3).ln() / (2.0 * n as f64)).sqrt();
    assert!(worst_emp < dkw, "{worst_emp:e} vs {dkw:e}");
}
