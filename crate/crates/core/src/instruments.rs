//! Zero-coupon bonds, bond forwards and swaps with and without the collateral
//! choice option.
//!
//! Spreads are independent of the domestic rate in every analytic price here;
//! the domestic/spread correlations only enter the simulator.

use serde::{Deserialize, Serialize};

use crate::ctd_engine::{conditional_ctd_term, ctd_common_factor_term, ctd_deterministic, CfSettings};
use crate::error::{CtdError, Result};
use crate::spread_model::{integral_covariance, HullWhiteSpec, MarketModel};

/// `E_t[exp(-int_t^T x)]` for a Hull-White process whose OU displacement at
/// `t` is `u`.
pub fn conditional_bond(spec: &HullWhiteSpec, t: f64, t_end: f64, u: f64) -> Result<f64> {
    spec.mean_curve().check_covers(t, t_end)?;
    if t_end <= t {
        return Ok(1.0);
    }
    let mean = spec.mean_curve().integral(t, t_end) + u * spec.decay_integral(t_end - t);
    let var = integral_covariance(spec, spec, 1.0, t, t_end);
    Ok((-mean + 0.5 * var).exp())
}

/// Domestic zero-coupon bond `P(t, T)` on the forecast state.
pub fn zcb_domestic(model: &MarketModel, t: f64, t_end: f64) -> Result<f64> {
    conditional_bond(&model.domestic, t, t_end, 0.0)
}

/// Domestic price `Q_i(t, T)` of the foreign bond of currency `i`;
/// `i = 0` is the domestic bond.
pub fn zcb_foreign(model: &MarketModel, i: usize, t: f64, t_end: f64) -> Result<f64> {
    zcb_given(model, i, t, t_end, &vec![0.0; model.n_spreads() + 1])
}

/// `Q_i(t, T)` given OU displacements `state[p]` of every process at `t`
/// (index 0 the domestic rate).
pub fn zcb_given(model: &MarketModel, i: usize, t: f64, t_end: f64, state: &[f64]) -> Result<f64> {
    check_index(model, i)?;
    let p = conditional_bond(&model.domestic, t, t_end, state[0])?;
    if i == 0 {
        return Ok(p);
    }
    Ok(p * conditional_bond(&model.spreads[i - 1], t, t_end, state[i])?)
}

/// Collateral-choice bond `P^c(t, T) = CTD(t, T) P(t, T)` at several
/// maturities, conditional on the state at `t`.
pub fn collateral_bond_given(
    model: &MarketModel,
    t: f64,
    maturities: &[f64],
    state: &[f64],
    settings: CfSettings,
) -> Result<Vec<f64>> {
    let ctd = conditional_ctd_term(model, t, &state[1..], maturities, settings)?;
    maturities
        .iter()
        .zip(ctd)
        .map(|(&m, c)| Ok(c * conditional_bond(&model.domestic, t, m, state[0])?))
        .collect()
}

fn check_index(model: &MarketModel, i: usize) -> Result<()> {
    if i > model.n_spreads() {
        return Err(CtdError::validation(format!(
            "currency index {i} outside 0..={}",
            model.n_spreads()
        )));
    }
    Ok(())
}

/// Forward delivering `Q_underlying(delivery, maturity)` at `delivery`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForwardBondContract {
    pub underlying: usize,
    pub delivery: f64,
    pub maturity: f64,
}

impl ForwardBondContract {
    pub fn new(underlying: usize, delivery: f64, maturity: f64) -> Result<Self> {
        if !(delivery <= maturity) {
            return Err(CtdError::validation(format!(
                "forward delivery {delivery} after bond maturity {maturity}"
            )));
        }
        Ok(Self {
            underlying,
            delivery,
            maturity,
        })
    }
}

/// `F_i(t, S, T) = Q_i(t, T) / P(t, S)`; after delivery the contract has
/// settled into the bond itself.
pub fn forward_bond(model: &MarketModel, contract: &ForwardBondContract, t: f64) -> Result<f64> {
    forward_bond_given(model, contract, t, &vec![0.0; model.n_spreads() + 1])
}

pub fn forward_bond_given(
    model: &MarketModel,
    contract: &ForwardBondContract,
    t: f64,
    state: &[f64],
) -> Result<f64> {
    let q = zcb_given(model, contract.underlying, t, contract.maturity, state)?;
    if t >= contract.delivery {
        return Ok(q);
    }
    Ok(q / conditional_bond(&model.domestic, t, contract.delivery, state[0])?)
}

/// Simply compounded forward rate for `(t_prev, t_k]` seen at `t`.
pub fn forward_ibor(model: &MarketModel, t: f64, t_prev: f64, t_k: f64) -> Result<f64> {
    ibor_given(model, t, t_prev, t_k, 0.0)
}

fn ibor_given(model: &MarketModel, t: f64, t_prev: f64, t_k: f64, u0: f64) -> Result<f64> {
    if t > t_prev {
        return Err(CtdError::validation(format!(
            "forward rate for ({t_prev}, {t_k}] has already fixed at time {t}"
        )));
    }
    if t_k <= t_prev {
        return Err(CtdError::validation("accrual period must have positive length"));
    }
    let a = conditional_bond(&model.domestic, t, t_prev, u0)?;
    let b = conditional_bond(&model.domestic, t, t_k, u0)?;
    Ok((a - b) / ((t_k - t_prev) * b))
}

/// Fixed-for-floating swap on abstract year fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwapSpec {
    pub notional: f64,
    pub fixed_rate: f64,
    /// Accrual start `T_0`.
    pub start: f64,
    /// Payment dates `T_1 < ... < T_m`.
    pub payment_dates: Vec<f64>,
    /// Payer of the fixed rate (receives floating).
    #[serde(default = "default_payer")]
    pub payer: bool,
}

fn default_payer() -> bool {
    true
}

impl SwapSpec {
    pub fn new(notional: f64, fixed_rate: f64, start: f64, payment_dates: Vec<f64>, payer: bool) -> Result<Self> {
        let s = Self {
            notional,
            fixed_rate,
            start,
            payment_dates,
            payer,
        };
        s.validate()?;
        Ok(s)
    }

    /// Swap with `m` equal periods of length `period` starting at `start`.
    pub fn regular(notional: f64, fixed_rate: f64, start: f64, period: f64, m: usize, payer: bool) -> Result<Self> {
        let dates = (1..=m).map(|k| start + period * k as f64).collect();
        Self::new(notional, fixed_rate, start, dates, payer)
    }

    pub fn validate(&self) -> Result<()> {
        if self.payment_dates.is_empty() {
            return Err(CtdError::validation("swap needs at least one payment date"));
        }
        if !self.notional.is_finite() || !self.fixed_rate.is_finite() {
            return Err(CtdError::validation("swap notional and fixed rate must be finite"));
        }
        let mut prev = self.start;
        for &d in &self.payment_dates {
            if !(d > prev) {
                return Err(CtdError::validation("swap payment dates must be strictly increasing after the start"));
            }
            prev = d;
        }
        Ok(())
    }

    /// Accrual start of period `k` (0-based).
    pub fn period_start(&self, k: usize) -> f64 {
        if k == 0 {
            self.start
        } else {
            self.payment_dates[k - 1]
        }
    }

    pub fn accrual(&self, k: usize) -> f64 {
        self.payment_dates[k] - self.period_start(k)
    }

    pub fn maturity(&self) -> f64 {
        *self.payment_dates.last().unwrap()
    }

    fn sign(&self) -> f64 {
        if self.payer {
            1.0
        } else {
            -1.0
        }
    }
}

/// Values `U_k(t)` of the remaining single-period legs (`T_k >= t`), paired
/// with their payment dates. `fixings[k]` supplies the floating rate of
/// periods that started before `t`.
pub fn swap_legs_given(
    model: &MarketModel,
    spec: &SwapSpec,
    t: f64,
    u0: f64,
    fixings: &[Option<f64>],
) -> Result<Vec<(f64, f64)>> {
    spec.validate()?;
    let mut legs = Vec::new();
    for k in 0..spec.payment_dates.len() {
        let tk = spec.payment_dates[k];
        if tk < t {
            continue;
        }
        let tau = spec.accrual(k);
        let p = conditional_bond(&model.domestic, t, tk, u0)?;
        let start = spec.period_start(k);
        let rate = if t <= start {
            ibor_given(model, t, start, tk, u0)?
        } else {
            fixings.get(k).copied().flatten().ok_or_else(|| {
                CtdError::validation(format!("period ending {tk} started before {t} and has no fixing"))
            })?
        };
        legs.push((tk, spec.sign() * spec.notional * tau * p * (rate - spec.fixed_rate)));
    }
    Ok(legs)
}

/// Swap value `V(t) = N sum tau_k P(t, T_k) (l_k(t) - K)` for `t <= T_0`.
pub fn swap_value(model: &MarketModel, spec: &SwapSpec, t: f64) -> Result<f64> {
    Ok(swap_legs_given(model, spec, t, 0.0, &[])?.iter().map(|l| l.1).sum())
}

/// Fixed rate making the swap worth zero at `t <= T_0`.
pub fn par_rate(model: &MarketModel, spec: &SwapSpec, t: f64) -> Result<f64> {
    let p0 = zcb_domestic(model, t, spec.start)?;
    let pm = zcb_domestic(model, t, spec.maturity())?;
    let mut annuity = 0.0;
    for k in 0..spec.payment_dates.len() {
        annuity += spec.accrual(k) * zcb_domestic(model, t, spec.payment_dates[k])?;
    }
    Ok((p0 - pm) / annuity)
}

/// Source of the CTD factor applied to each swap leg.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CtdMethod {
    None,
    Deterministic,
    CommonFactor,
}

impl CtdMethod {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "deterministic" | "det" => Ok(Self::Deterministic),
            "common_factor" | "cf" => Ok(Self::CommonFactor),
            _ => Err(CtdError::validation(format!(
                "unknown CTD method '{s}' (expected none, deterministic or common_factor)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Deterministic => "deterministic",
            Self::CommonFactor => "common_factor",
        }
    }
}

/// CTD factors `CTD(t, T_k)` for each maturity under `method`, using the
/// forecast curves as seen from `t`.
pub fn ctd_factors(
    model: &MarketModel,
    t: f64,
    maturities: &[f64],
    method: CtdMethod,
    settings: CfSettings,
) -> Result<Vec<f64>> {
    match method {
        CtdMethod::None => Ok(vec![1.0; maturities.len()]),
        CtdMethod::Deterministic => maturities
            .iter()
            .map(|&m| ctd_deterministic(model, t, m))
            .collect(),
        CtdMethod::CommonFactor => {
            let live: Vec<f64> = maturities.iter().copied().filter(|&m| m > t).collect();
            let vals = if live.is_empty() {
                Vec::new()
            } else {
                ctd_common_factor_term(model, t, &live, settings)?
            };
            let mut it = vals.into_iter();
            Ok(maturities
                .iter()
                .map(|&m| if m > t { it.next().unwrap() } else { 1.0 })
                .collect())
        }
    }
}

/// Swap with the collateral choice option: each leg scaled by `CTD(t, T_k)`.
pub fn swap_value_ctd(model: &MarketModel, spec: &SwapSpec, t: f64, method: CtdMethod) -> Result<f64> {
    let legs = swap_legs_given(model, spec, t, 0.0, &[])?;
    let dates: Vec<f64> = legs.iter().map(|l| l.0).collect();
    let c = ctd_factors(model, t, &dates, method, CfSettings::default())?;
    Ok(legs.iter().zip(c).map(|(l, c)| l.1 * c).sum())
}
