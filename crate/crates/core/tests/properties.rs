use ctd_core::ctd_engine::{
    ctd_common_factor, ctd_deterministic, CfSettings, CommonFactorState, GaussianVectorSnapshot,
};
use ctd_core::curve::SpreadCurve;
use ctd_core::hedging::{
    assemble_quadratic, build_basic_portfolio, build_deterministic_portfolio, build_none_portfolio,
    build_stochastic_portfolio, kkt_violation, model_crossing_schedule, solve_min_variance, Alpha0Policy, Portfolio,
    Quotes,
};
use ctd_core::instruments::{forward_bond, zcb_domestic, zcb_foreign, ForwardBondContract};
use ctd_core::spread_model::{
    bond_moment, integral_covariance, mean_under_piecewise_theta, spread_cross_covariance, theta_piecewise,
    CorrelationMatrix, HullWhiteSpec, MarketModel,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn linear_spec(kappa: f64, xi: f64, a: f64, b: f64, t_end: f64) -> HullWhiteSpec {
    HullWhiteSpec::new(kappa, xi, SpreadCurve::linear(0.0, t_end, a, b).unwrap()).unwrap()
}

fn two_spread(k: (f64, f64), xi: (f64, f64), c: (f64, f64, f64, f64), rho: f64, t_end: f64) -> MarketModel {
    MarketModel::new(
        HullWhiteSpec::new(0.1, 0.0, SpreadCurve::constant(0.0, t_end, 0.0).unwrap()).unwrap(),
        vec![linear_spec(k.0, xi.0, c.0, c.1, t_end), linear_spec(k.1, xi.1, c.2, c.3, t_end)],
        CorrelationMatrix::two_spreads(rho).unwrap(),
    )
    .unwrap()
}

fn shifted(model: &MarketModel, i: usize, bump: f64) -> MarketModel {
    let spec = &model.spreads[i - 1];
    let c = spec.mean_curve();
    let curve = SpreadCurve::new(c.times().to_vec(), c.values().iter().map(|v| v + bump).collect()).unwrap();
    model.with_spread(i, spec.with_curve(curve).unwrap())
}

fn cheap() -> CfSettings {
    CfSettings { nodes_per_year: 24 }
}

prop_compose! {
    fn spec_strategy()(kappa in 0.001f64..1.5, xi in 0.0f64..0.01, a in -0.02f64..0.02, b in -0.02f64..0.02,
                       mid in -0.02f64..0.02) -> HullWhiteSpec {
        HullWhiteSpec::new(kappa, xi, SpreadCurve::new(vec![0.0, 4.0, 10.0], vec![a, mid, b]).unwrap()).unwrap()
    }
}

prop_compose! {
    fn model_strategy()(k1 in 0.001f64..1.0, k2 in 0.001f64..1.0, x1 in 0.0f64..0.01, x2 in 0.0f64..0.01,
                        a in -0.02f64..0.02, b in -0.02f64..0.02, c in -0.02f64..0.02, d in -0.02f64..0.02,
                        rho in -0.9f64..0.9) -> MarketModel {
        two_spread((k1, k2), (x1, x2), (a, b, c, d), rho, 10.0)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn piecewise_theta_reproduces_the_curve(spec in spec_strategy(), n in 1usize..200) {
        let grid: Vec<f64> = (0..=n).map(|k| 10.0 * k as f64 / n as f64).collect();
        let theta = theta_piecewise(&spec, &grid).unwrap();
        let means = mean_under_piecewise_theta(&spec, &grid, &theta);
        for (k, t) in grid.iter().enumerate() {
            prop_assert!((means[k] - spec.mean_curve().at(*t)).abs() < 1e-12);
        }
    }

    #[test]
    fn moments_are_translation_invariant(spec in spec_strategy(), other in spec_strategy(),
                                         rho in -0.9f64..0.9, c in 0.0f64..30.0) {
        let (t0, t_end) = (1.0, 7.5);
        let model = MarketModel::new(
            HullWhiteSpec::new(0.1, 0.0, SpreadCurve::constant(0.0, 10.0, 0.0).unwrap()).unwrap(),
            vec![spec.clone(), other.clone()],
            CorrelationMatrix::two_spreads(rho).unwrap(),
        ).unwrap();
        let moved = model.time_translated(c);
        let (a, b) = (&model.spreads[0], &model.spreads[1]);
        let (ma, mb) = (&moved.spreads[0], &moved.spreads[1]);
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-11 * x.abs().max(1e-12);
        prop_assert!(close(integral_covariance(a, b, rho, t0, t_end), integral_covariance(ma, mb, rho, t0 + c, t_end + c)));
        prop_assert!(close(
            spread_cross_covariance(a, b, rho, t0, 3.0, 5.0),
            spread_cross_covariance(ma, mb, rho, t0 + c, 3.0 + c, 5.0 + c)
        ));
        for m in [1, 2] {
            prop_assert!(close(bond_moment(a, t0, t_end, m).unwrap(), bond_moment(ma, t0 + c, t_end + c, m).unwrap()));
        }
    }

    #[test]
    fn bond_moment_monotone_in_level_and_volatility(spec in spec_strategy(), m in 1u32..=2) {
        let base = bond_moment(&spec, 0.0, 10.0, m).unwrap();
        let c = spec.mean_curve();
        let up = spec.with_curve(SpreadCurve::new(c.times().to_vec(), c.values().iter().map(|v| v + 0.001).collect()).unwrap()).unwrap();
        prop_assert!(bond_moment(&up, 0.0, 10.0, m).unwrap() < base);
        let vol = spec.with_xi(spec.xi() + 0.001).unwrap();
        prop_assert!(bond_moment(&vol, 0.0, 10.0, m).unwrap() > base);
    }

    #[test]
    fn raising_a_forecast_never_raises_the_ctd(model in model_strategy(), i in 1usize..=2) {
        let up = shifted(&model, i, 0.001);
        prop_assert!(ctd_deterministic(&up, 0.0, 10.0).unwrap() <= ctd_deterministic(&model, 0.0, 10.0).unwrap() + 1e-15);
        prop_assert!(ctd_common_factor(&up, 0.0, 10.0, cheap()).unwrap()
            <= ctd_common_factor(&model, 0.0, 10.0, cheap()).unwrap() + 1e-8);
    }

    #[test]
    fn ctd_over_an_empty_interval_is_one(model in model_strategy(), t in 0.0f64..10.0) {
        prop_assert_eq!(ctd_deterministic(&model, t, t).unwrap(), 1.0);
        prop_assert_eq!(ctd_common_factor(&model, t, t, cheap()).unwrap(), 1.0);
    }

    #[test]
    fn common_factor_state_keeps_the_marginals(
        s in proptest::collection::vec(0.0005f64..0.01, 3),
        r in proptest::collection::vec(-0.8f64..0.95, 3),
        mu in proptest::collection::vec(-0.02f64..0.02, 3),
    ) {
        let corr = [[1.0, r[0], r[1]], [r[0], 1.0, r[2]], [r[1], r[2], 1.0]];
        let cov = DMatrix::from_fn(3, 3, |i, j| corr[i][j] * s[i] * s[j]);
        prop_assume!(cov.clone().cholesky().is_some());
        let snap = GaussianVectorSnapshot::new(2.0, mu.clone(), cov.clone()).unwrap();
        let state = CommonFactorState::from_snapshot(&snap, true).unwrap();
        for i in 0..3 {
            prop_assert!((state.component_means[i] - mu[i]).abs() < 1e-12);
            prop_assert!((state.marginal_variance(i) - cov[(i, i)]).abs() < 1e-12 * cov[(i, i)].max(1e-300) + 1e-18);
        }
    }

    #[test]
    fn bonds_pull_to_par_and_forwards_match_spot(model in model_strategy(), s in 0.5f64..9.5, i in 1usize..=2) {
        let t_end = 10.0;
        prop_assert!((zcb_domestic(&model, t_end - 1e-8, t_end).unwrap() - 1.0).abs() < 1e-6);
        prop_assert!((zcb_foreign(&model, i, t_end - 1e-8, t_end).unwrap() - 1.0).abs() < 1e-6);
        let f = forward_bond(&model, &ForwardBondContract::new(i, s, t_end).unwrap(), 0.0).unwrap();
        let q = zcb_foreign(&model, i, 0.0, t_end).unwrap();
        prop_assert!((f * zcb_domestic(&model, 0.0, s).unwrap() - q).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn hedge_weights_satisfy_box_kkt(model in model_strategy(), bound in 0.5f64..2.0) {
        let form = assemble_quadratic(&model, 0.0, 10.0, cheap()).unwrap();
        let w = solve_min_variance(&form, Alpha0Policy::Free, bound).unwrap();
        prop_assert!(kkt_violation(&form, &w.alpha, bound) < 1e-9);
        let f0 = form.objective(&w.alpha);
        for k in 1..w.alpha.len() {
            for d in [-0.01, 0.01] {
                let mut a = w.alpha.clone();
                a[k] = (a[k] + d).clamp(-bound, bound);
                prop_assert!(form.objective(&a) >= f0 - 1e-12 * f0.abs().max(1e-12));
            }
        }
    }

    #[test]
    fn portfolios_start_at_zero(model in model_strategy(), pc0 in 0.5f64..1.0) {
        let zeros = [0.0; 3];
        let q = Quotes { model: &model, t: 0.0, state: &zeros, collateral_bond: pc0 };
        let schedule = model_crossing_schedule(&model, 0.0, 10.0).unwrap();
        let ps: Vec<Portfolio> = vec![
            build_none_portfolio(&model, 0.0, 10.0, pc0).unwrap(),
            build_basic_portfolio(&model, 1, 0.0, 10.0, pc0).unwrap(),
            build_deterministic_portfolio(&model, &schedule, 0.0, 10.0, pc0).unwrap(),
            build_stochastic_portfolio(&model, &[0.2, -0.5, -0.4], 0.0, 10.0, pc0).unwrap(),
        ];
        for p in ps {
            prop_assert!(p.value(&q, 1.0).unwrap().abs() < 1e-12, "{}", p.name);
        }
    }
}
