//! Static hedge portfolios of the collateral-choice bond: variance-minimising,
//! crossing-time deterministic, basic single-bond and CTD-indifferent.

use serde::Serialize;

use crate::curve::{SpreadCurve, TIME_EPS};
use crate::error::{CtdError, Result};
use crate::instruments::{conditional_bond, forward_bond_given, zcb_given, ForwardBondContract};
use crate::spread_model::MarketModel;

/// Maximal deterministic spread per interval `[T^C_k, T^C_{k+1})`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossingSchedule {
    pub times: Vec<f64>,
    pub indices: Vec<usize>,
    pub horizon: f64,
}

/// Ties within this distance count as a shared maximum.
const TIE_EPS: f64 = 1e-14;

/// Crossing times of the pointwise maximum of `curves` (index 0 is normally
/// the zero domestic spread). Ties go to the lowest index.
pub fn crossing_schedule(curves: &[SpreadCurve], t0: f64, t_end: f64) -> Result<CrossingSchedule> {
    if curves.is_empty() {
        return Err(CtdError::validation("crossing schedule needs at least one curve"));
    }
    if !(t_end > t0) {
        return Err(CtdError::validation("crossing schedule needs t0 < T"));
    }
    for c in curves {
        c.check_covers(t0, t_end)?;
    }
    let mut breaks = vec![t0, t_end];
    for c in curves {
        breaks.extend(c.knots_between(t0, t_end));
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() < TIME_EPS);
    // within a knot interval every curve is linear; add pairwise crossings
    let mut pts = breaks.clone();
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        for i in 0..curves.len() {
            for j in i + 1..curves.len() {
                let da = curves[i].at(a) - curves[j].at(a);
                let db = curves[i].at(b) - curves[j].at(b);
                if da * db < 0.0 {
                    pts.push(a + (b - a) * da / (da - db));
                }
            }
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() < TIME_EPS);
    let argmax = |t: f64| -> usize {
        let vals: Vec<f64> = curves.iter().map(|c| c.at(t)).collect();
        let top = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        vals.iter().position(|&v| v >= top - TIE_EPS).unwrap()
    };
    let mut times = vec![t0];
    let mut indices = vec![argmax(0.5 * (pts[0] + pts[1]))];
    for w in pts.windows(2).skip(1) {
        let idx = argmax(0.5 * (w[0] + w[1]));
        if idx != *indices.last().unwrap() {
            times.push(w[0]);
            indices.push(idx);
        }
    }
    Ok(CrossingSchedule {
        times,
        indices,
        horizon: t_end,
    })
}

/// Schedule for the model's spread forecasts together with the zero spread.
pub fn model_crossing_schedule(model: &MarketModel, t0: f64, t_end: f64) -> Result<CrossingSchedule> {
    let mut curves = vec![SpreadCurve::constant(t0, t_end, 0.0)?];
    curves.extend(model.spreads.iter().map(|s| s.mean_curve().clone()));
    crossing_schedule(&curves, t0, t_end)
}

/// Tradeable position in a hedge portfolio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Instrument {
    /// Domestic bond with the collateral choice option, maturity `T`.
    CollateralBond,
    /// `Q_i(t, T)`; `Bond(0)` is the domestic bond.
    Bond(usize),
    /// `F_i(t, S, T)`, physically settled at `S`.
    Forward { underlying: usize, delivery: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Holding {
    pub instrument: Instrument,
    pub units: f64,
}

/// Portfolio of one collateral-choice bond, hedge positions and a cash
/// account accruing at `r_0` that offsets the initial price.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Portfolio {
    pub name: String,
    pub t0: f64,
    pub maturity: f64,
    pub holdings: Vec<Holding>,
    pub initial_cash: f64,
}

/// Prices of the portfolio ingredients at one time and state.
#[derive(Debug, Clone, Copy)]
pub struct Quotes<'a> {
    pub model: &'a MarketModel,
    pub t: f64,
    /// OU displacements at `t`, index 0 the domestic rate.
    pub state: &'a [f64],
    /// `P^c(t, T)` in this state.
    pub collateral_bond: f64,
}

impl Portfolio {
    fn instrument_value(&self, q: &Quotes<'_>, inst: Instrument) -> Result<f64> {
        match inst {
            Instrument::CollateralBond => Ok(q.collateral_bond),
            Instrument::Bond(i) => zcb_given(q.model, i, q.t, self.maturity, q.state),
            Instrument::Forward { underlying, delivery } => {
                let c = ForwardBondContract::new(underlying, delivery, self.maturity)?;
                forward_bond_given(q.model, &c, q.t, q.state)
            }
        }
    }

    /// Value of the positions without the cash account.
    pub fn positions_value(&self, q: &Quotes<'_>) -> Result<f64> {
        let mut v = 0.0;
        for h in &self.holdings {
            v += h.units * self.instrument_value(q, h.instrument)?;
        }
        Ok(v)
    }

    /// Value including cash grown by the bank account `bank = B(t0, t)`.
    pub fn value(&self, q: &Quotes<'_>, bank: f64) -> Result<f64> {
        Ok(self.positions_value(q)? + self.initial_cash * bank)
    }

    /// Net units held in each bond `Q_i` at `t` once forwards delivered
    /// before `t` have settled.
    pub fn bond_exposure(&self, n_spreads: usize, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; n_spreads + 1];
        for h in &self.holdings {
            match h.instrument {
                Instrument::Bond(i) => out[i] += h.units,
                Instrument::Forward { underlying, delivery } if delivery <= t => out[underlying] += h.units,
                _ => {}
            }
        }
        out
    }
}

fn forecast_quotes<'a>(model: &'a MarketModel, t0: f64, zeros: &'a [f64], pc: f64) -> Quotes<'a> {
    Quotes {
        model,
        t: t0,
        state: zeros,
        collateral_bond: pc,
    }
}

fn finish(model: &MarketModel, name: String, t0: f64, t_end: f64, holdings: Vec<Holding>, pc0: f64) -> Result<Portfolio> {
    let mut p = Portfolio {
        name,
        t0,
        maturity: t_end,
        holdings,
        initial_cash: 0.0,
    };
    let zeros = vec![0.0; model.n_spreads() + 1];
    let pos = p.positions_value(&forecast_quotes(model, t0, &zeros, pc0))?;
    p.initial_cash = -pos;
    Ok(p)
}

fn check_bond(model: &MarketModel, i: usize) -> Result<()> {
    if i > model.n_spreads() {
        return Err(CtdError::validation(format!("bond index {i} outside 0..={}", model.n_spreads())));
    }
    Ok(())
}

/// `P^c + sum alpha_i Q_i + cash`.
pub fn build_stochastic_portfolio(model: &MarketModel, alpha: &[f64], t0: f64, t_end: f64, pc0: f64) -> Result<Portfolio> {
    if alpha.len() != model.n_spreads() + 1 {
        return Err(CtdError::validation("weight vector length differs from N + 1"));
    }
    let mut h = vec![Holding {
        instrument: Instrument::CollateralBond,
        units: 1.0,
    }];
    h.extend(alpha.iter().enumerate().filter(|(_, a)| **a != 0.0).map(|(i, &a)| Holding {
        instrument: Instrument::Bond(i),
        units: a,
    }));
    finish(model, "stoch".into(), t0, t_end, h, pc0)
}

/// Short one unit of the interval-maximal bond through forwards on the
/// crossing schedule.
pub fn build_deterministic_portfolio(
    model: &MarketModel,
    schedule: &CrossingSchedule,
    t0: f64,
    t_end: f64,
    pc0: f64,
) -> Result<Portfolio> {
    if schedule.times.first().map(|&t| (t - t0).abs() > TIME_EPS).unwrap_or(true) {
        return Err(CtdError::validation("crossing schedule must start at t0"));
    }
    let mut h = vec![Holding {
        instrument: Instrument::CollateralBond,
        units: 1.0,
    }];
    let k_last = schedule.times.len() - 1;
    for k in 0..=k_last {
        let i = schedule.indices[k];
        check_bond(model, i)?;
        h.push(Holding {
            instrument: Instrument::Forward {
                underlying: i,
                delivery: schedule.times[k],
            },
            units: -1.0,
        });
        if k < k_last {
            h.push(Holding {
                instrument: Instrument::Forward {
                    underlying: i,
                    delivery: schedule.times[k + 1],
                },
                units: 1.0,
            });
        }
    }
    finish(model, "det".into(), t0, t_end, h, pc0)
}

/// `P^c - Q_i + cash`; `i = 0` ignores the collateral choice.
pub fn build_basic_portfolio(model: &MarketModel, i: usize, t0: f64, t_end: f64, pc0: f64) -> Result<Portfolio> {
    check_bond(model, i)?;
    let h = vec![
        Holding {
            instrument: Instrument::CollateralBond,
            units: 1.0,
        },
        Holding {
            instrument: Instrument::Bond(i),
            units: -1.0,
        },
    ];
    let name = if i == 0 { "none".to_string() } else { format!("basic{i}") };
    finish(model, name, t0, t_end, h, pc0)
}

pub fn build_none_portfolio(model: &MarketModel, t0: f64, t_end: f64, pc0: f64) -> Result<Portfolio> {
    build_basic_portfolio(model, 0, t0, t_end, pc0)
}

/// Terminal value of a portfolio whose instruments all pay 1 at `T` when the
/// domestic rate is deterministic: `positions(T) + cash * B(t0, T)`.
pub fn deterministic_terminal_value(model: &MarketModel, p: &Portfolio) -> Result<f64> {
    let units: f64 = p.holdings.iter().map(|h| h.units).sum();
    let bank = 1.0 / conditional_bond(&model.domestic, p.t0, p.maturity, 0.0)?;
    Ok(units + p.initial_cash * bank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spread_model::{CorrelationMatrix, HullWhiteSpec};
    use approx::assert_abs_diff_eq;

    fn lin(a: f64, b: f64) -> SpreadCurve {
        SpreadCurve::linear(0.0, 10.0, a, b).unwrap()
    }

    fn model(c1: SpreadCurve, c2: SpreadCurve, r: f64) -> MarketModel {
        MarketModel::new(
            HullWhiteSpec::new(0.05, 0.0, SpreadCurve::constant(0.0, 10.0, r).unwrap()).unwrap(),
            vec![
                HullWhiteSpec::new(0.0078, 0.0018, c1).unwrap(),
                HullWhiteSpec::new(0.0076, 0.0023, c2).unwrap(),
            ],
            CorrelationMatrix::two_spreads(0.3).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn schedules() {
        let zero = SpreadCurve::constant(0.0, 10.0, 0.0).unwrap();
        let s = crossing_schedule(&[zero.clone(), lin(0.004, 0.002), lin(0.001, 0.0015)], 0.0, 10.0).unwrap();
        assert_eq!(s.times, vec![0.0]);
        assert_eq!(s.indices, vec![1]);
        // q1 falls from 0.003 to 0.0005, q2 rises from 0.001 to 0.003
        let s = crossing_schedule(&[zero.clone(), lin(0.003, 0.0005), lin(0.001, 0.003)], 0.0, 10.0).unwrap();
        assert_eq!(s.indices, vec![1, 2]);
        assert_abs_diff_eq!(s.times[1], 0.002 / 0.00045, epsilon = 1e-12);
        let s = crossing_schedule(&[zero.clone(), lin(-0.01, -0.001), lin(-0.002, -0.003)], 0.0, 10.0).unwrap();
        assert_eq!((s.times.clone(), s.indices.clone()), (vec![0.0], vec![0]));
        // tie on the whole interval resolves to the lower index
        let s = crossing_schedule(&[zero, lin(0.002, 0.002), lin(0.002, 0.002)], 0.0, 10.0).unwrap();
        assert_eq!(s.indices, vec![1]);
    }

    #[test]
    fn builders_start_at_zero() {
        let m = model(lin(0.003, 0.0005), lin(0.001, 0.003), 0.01);
        let sched = model_crossing_schedule(&m, 0.0, 10.0).unwrap();
        assert_eq!(sched.indices, vec![1, 2]);
        let pc0 = 0.9;
        let zeros = [0.0; 3];
        let q = forecast_quotes(&m, 0.0, &zeros, pc0);
        let ports = [
            build_deterministic_portfolio(&m, &sched, 0.0, 10.0, pc0).unwrap(),
            build_basic_portfolio(&m, 2, 0.0, 10.0, pc0).unwrap(),
            build_none_portfolio(&m, 0.0, 10.0, pc0).unwrap(),
            build_stochastic_portfolio(&m, &[0.1, -0.4, -0.3], 0.0, 10.0, pc0).unwrap(),
        ];
        for p in &ports {
            assert!(p.value(&q, 1.0).unwrap().abs() < 1e-12);
        }
        let det = &ports[0];
        let t_c = sched.times[1];
        assert_eq!(det.bond_exposure(2, 1.0), vec![0.0, -1.0, 0.0]);
        assert_eq!(det.bond_exposure(2, t_c + 0.1), vec![0.0, 0.0, -1.0]);
    }

    #[test]
    fn zero_rate_deterministic_strategy_is_basic_in_last_bond() {
        let m = model(lin(0.003, 0.0005), lin(0.001, 0.003), 0.0);
        let sched = model_crossing_schedule(&m, 0.0, 10.0).unwrap();
        let det = build_deterministic_portfolio(&m, &sched, 0.0, 10.0, 0.95).unwrap();
        let b2 = build_basic_portfolio(&m, 2, 0.0, 10.0, 0.95).unwrap();
        let state = [0.0, 0.001, -0.002];
        for t in [0.0, 2.0, 5.0, 9.0] {
            let q = Quotes {
                model: &m,
                t,
                state: &state,
                collateral_bond: 0.97,
            };
            assert_abs_diff_eq!(det.value(&q, 1.0).unwrap(), b2.value(&q, 1.0).unwrap(), epsilon = 1e-14);
        }
    }

    #[test]
    fn domestic_schedule_gives_none() {
        let m = model(lin(-0.003, -0.001), lin(-0.001, -0.003), 0.02);
        let sched = model_crossing_schedule(&m, 0.0, 10.0).unwrap();
        let det = build_deterministic_portfolio(&m, &sched, 0.0, 10.0, 0.8).unwrap();
        let none = build_none_portfolio(&m, 0.0, 10.0, 0.8).unwrap();
        let zeros = [0.0; 3];
        for t in [0.0, 4.0] {
            let q = forecast_quotes(&m, t, &zeros, 0.85);
            assert_abs_diff_eq!(det.value(&q, 1.1).unwrap(), none.value(&q, 1.1).unwrap(), epsilon = 1e-14);
        }
    }
}
