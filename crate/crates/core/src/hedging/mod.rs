//! Static hedging of the collateral choice option with foreign-collateral
//! bonds and forwards, and pathwise evaluation of the hedges.

mod paths;
mod portfolio;
mod quadratic;

pub use paths::{
    evaluate_portfolio_paths, state_at, synthetic_replication_pnl, ConditionalCtdSurface, PathEvaluation,
    PnlDistribution, PortfolioPathStats, RevaluationSettings,
};
pub use portfolio::{
    build_basic_portfolio, build_deterministic_portfolio, build_none_portfolio, build_stochastic_portfolio,
    crossing_schedule, deterministic_terminal_value, model_crossing_schedule, CrossingSchedule, Holding,
    Instrument, Portfolio, Quotes,
};
pub use quadratic::{
    assemble_quadratic, gradient, kkt_violation, solve_min_variance, Alpha0Policy, HedgeWeights, QuadraticForm,
    DEGENERACY_TOLERANCE, PSD_CLIP,
};

use serde::Serialize;

use crate::ctd_engine::{ctd_common_factor_term, CfSettings};
use crate::curve::TIME_EPS;
use crate::error::Result;
use crate::instruments::{conditional_bond, zcb_domestic};
use crate::spread_model::MarketModel;

/// Strategy summary at inception.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategySummary {
    pub portfolio: Portfolio,
    /// Bond weights with the same terminal exposure as the portfolio.
    pub equivalent_alpha: Vec<f64>,
    /// `f(alpha)` at the equivalent weights.
    pub objective: f64,
    /// Terminal value when `r_0` is deterministic.
    pub terminal_value: Option<f64>,
}

/// Everything needed to compare the static hedges at `t0`.
#[derive(Debug, Clone)]
pub struct HedgeReport {
    pub t0: f64,
    pub maturity: f64,
    pub collateral_price: f64,
    pub form: QuadraticForm,
    pub weights: HedgeWeights,
    pub schedule: CrossingSchedule,
    pub strategies: Vec<StrategySummary>,
}

impl HedgeReport {
    pub fn strategy(&self, name: &str) -> Option<&StrategySummary> {
        self.strategies.iter().find(|s| s.portfolio.name == name)
    }
}

/// Static weight vector equivalent to a portfolio's exposure at `T`.
///
/// A forward on `Q_i` delivered at `S` counts `1 / P(t0, S)` bonds, which is
/// exact when `r_0` is deterministic.
pub fn equivalent_alpha(model: &MarketModel, p: &Portfolio) -> Result<Vec<f64>> {
    let mut alpha = vec![0.0; model.n_spreads() + 1];
    for h in &p.holdings {
        match h.instrument {
            Instrument::CollateralBond => {}
            Instrument::Bond(i) => alpha[i] += h.units,
            Instrument::Forward { underlying, delivery } => {
                let scale = if delivery > p.t0 + TIME_EPS {
                    1.0 / conditional_bond(&model.domestic, p.t0, delivery, 0.0)?
                } else {
                    1.0
                };
                alpha[underlying] += h.units * scale;
            }
        }
    }
    Ok(alpha)
}

fn deterministic_domestic(model: &MarketModel) -> bool {
    model.domestic.xi() == 0.0
}

/// Solves for the minimum-variance weights and builds the none, basic,
/// deterministic and stochastic portfolios.
pub fn hedge_report(
    model: &MarketModel,
    t0: f64,
    t_end: f64,
    policy: Alpha0Policy,
    bound: f64,
    settings: CfSettings,
) -> Result<HedgeReport> {
    let form = assemble_quadratic(model, t0, t_end, settings)?;
    let weights = solve_min_variance(&form, policy, bound)?;
    let schedule = model_crossing_schedule(model, t0, t_end)?;
    let ctd = ctd_common_factor_term(model, t0, &[t_end], settings)?[0];
    let pc0 = ctd * zcb_domestic(model, t0, t_end)?;
    let mut portfolios = vec![build_none_portfolio(model, t0, t_end, pc0)?];
    for i in 1..=model.n_spreads() {
        portfolios.push(build_basic_portfolio(model, i, t0, t_end, pc0)?);
    }
    portfolios.push(build_deterministic_portfolio(model, &schedule, t0, t_end, pc0)?);
    portfolios.push(build_stochastic_portfolio(model, &weights.alpha, t0, t_end, pc0)?);
    let strategies = portfolios
        .into_iter()
        .map(|p| {
            let alpha = equivalent_alpha(model, &p)?;
            let terminal_value = if deterministic_domestic(model) {
                Some(deterministic_terminal_value(model, &p)?)
            } else {
                None
            };
            Ok(StrategySummary {
                objective: form.objective(&alpha),
                equivalent_alpha: alpha,
                terminal_value,
                portfolio: p,
            })
        })
        .collect::<Result<_>>()?;
    Ok(HedgeReport {
        t0,
        maturity: t_end,
        collateral_price: pc0,
        form,
        weights,
        schedule,
        strategies,
    })
}
