//! Bump-and-revalue sensitivities of the CTD discount factor to spread
//! volatilities and mean levels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ctd_engine::{ctd_common_factor, ctd_deterministic, CfSettings};
use crate::curve::SpreadCurve;
use crate::error::{CtdError, Result};
use crate::spread_model::MarketModel;

pub const DEFAULT_EPSILON: f64 = 1e-4;

/// Relative gap between the `eps` and `2 eps` estimates above which a
/// warning is attached.
const NOISE_TOLERANCE: f64 = 0.05;

/// Parameter moved by a bump; spread indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BumpTarget {
    Xi(usize),
    /// Parallel shift of the mean curve.
    MeanLevel(usize),
}

impl BumpTarget {
    pub fn index(&self) -> usize {
        match *self {
            BumpTarget::Xi(i) | BumpTarget::MeanLevel(i) => i,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            BumpTarget::Xi(i) => format!("xi{i}"),
            BumpTarget::MeanLevel(i) => format!("q{i}_level"),
        }
    }

    /// Parses `xi1`, `q2_level` and similar labels.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || CtdError::validation(format!("unknown bump target '{s}' (expected xiN or qN_level)"));
        if let Some(rest) = s.strip_prefix("xi") {
            return rest.parse().map(BumpTarget::Xi).map_err(|_| bad());
        }
        if let Some(rest) = s.strip_prefix('q').and_then(|r| r.strip_suffix("_level")) {
            return rest.parse().map(BumpTarget::MeanLevel).map_err(|_| bad());
        }
        Err(bad())
    }

    /// Model with the target moved by `delta`.
    pub fn apply(&self, model: &MarketModel, delta: f64) -> Result<MarketModel> {
        let i = self.index();
        if i == 0 || i > model.n_spreads() {
            return Err(CtdError::validation(format!(
                "bump target {} references a missing spread",
                self.label()
            )));
        }
        let spec = &model.spreads[i - 1];
        let bumped = match *self {
            BumpTarget::Xi(_) => spec.with_xi(spec.xi() + delta)?,
            BumpTarget::MeanLevel(_) => spec.with_curve(spec.mean_curve().shifted(delta))?,
        };
        Ok(model.with_spread(i, bumped))
    }
}

/// Central finite-difference request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpRequest {
    pub target: BumpTarget,
    pub epsilon: f64,
}

impl BumpRequest {
    pub fn new(target: BumpTarget, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(CtdError::validation(format!("bump size must be positive, got {epsilon}")));
        }
        Ok(Self { target, epsilon })
    }

    fn check(&self, model: &MarketModel) -> Result<()> {
        if let BumpTarget::Xi(i) = self.target {
            let xi = model
                .spreads
                .get(i.wrapping_sub(1))
                .map(|s| s.xi())
                .ok_or_else(|| CtdError::validation(format!("xi{i} references a missing spread")))?;
            if xi < self.epsilon {
                return Err(CtdError::validation(format!(
                    "xi{i} = {xi} is smaller than the bump size {}",
                    self.epsilon
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityMethod {
    Deterministic,
    CommonFactor,
}

impl SensitivityMethod {
    pub fn name(&self) -> &'static str {
        match self {
            SensitivityMethod::Deterministic => "deterministic",
            SensitivityMethod::CommonFactor => "common_factor",
        }
    }
}

/// Difference quotient at `epsilon` together with the `2 epsilon` estimate
/// used to detect quadrature noise or a kink (equal to `value` when a
/// volatility is too small for the wider bump).
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityEstimate {
    pub value: f64,
    pub wide: f64,
    pub warning: Option<String>,
}

fn price(model: &MarketModel, t0: f64, t_end: f64, method: SensitivityMethod, settings: CfSettings) -> Result<f64> {
    match method {
        SensitivityMethod::Deterministic => ctd_deterministic(model, t0, t_end),
        SensitivityMethod::CommonFactor => ctd_common_factor(model, t0, t_end, settings),
    }
}

fn central(
    model: &MarketModel,
    t0: f64,
    t_end: f64,
    target: BumpTarget,
    eps: f64,
    method: SensitivityMethod,
    settings: CfSettings,
) -> Result<f64> {
    let up = price(&target.apply(model, eps)?, t0, t_end, method, settings)?;
    let down = price(&target.apply(model, -eps)?, t0, t_end, method, settings)?;
    Ok((up - down) / (2.0 * eps))
}

/// `(CTD(p + eps) - CTD(p - eps)) / (2 eps)`.
pub fn ctd_sensitivity(
    model: &MarketModel,
    t0: f64,
    t_end: f64,
    request: BumpRequest,
    method: SensitivityMethod,
    settings: CfSettings,
) -> Result<SensitivityEstimate> {
    request.check(model)?;
    let value = central(model, t0, t_end, request.target, request.epsilon, method, settings)?;
    let room = match request.target {
        BumpTarget::Xi(i) => model.spreads[i - 1].xi() >= 2.0 * request.epsilon,
        BumpTarget::MeanLevel(_) => true,
    };
    let wide = if room {
        central(model, t0, t_end, request.target, 2.0 * request.epsilon, method, settings)?
    } else {
        value
    };
    if !value.is_finite() {
        return Err(CtdError::numerical(format!(
            "sensitivity to {} is not finite",
            request.target.label()
        )));
    }
    let scale = value.abs().max(wide.abs());
    let warning = (scale > 0.0 && (value - wide).abs() > NOISE_TOLERANCE * scale).then(|| {
        format!(
            "{} bump {:e}: estimate {value:.6e} differs from the 2x bump {wide:.6e}; \
             quadrature noise or a kink dominates",
            request.target.label(),
            request.epsilon
        )
    });
    Ok(SensitivityEstimate { value, wide, warning })
}

/// Parameter varied along a sensitivity profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// `xi_i` set to the sweep value.
    Xi(usize),
    /// Every spread volatility set to the sweep value.
    XiAll,
    /// Mean curve of spread `i` replaced by a constant at the sweep value.
    Level(usize),
}

impl SweepParameter {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "xi_all" || s == "xi" {
            return Ok(SweepParameter::XiAll);
        }
        match BumpTarget::parse(s)? {
            BumpTarget::Xi(i) => Ok(SweepParameter::Xi(i)),
            BumpTarget::MeanLevel(i) => Ok(SweepParameter::Level(i)),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            SweepParameter::Xi(i) => format!("xi{i}"),
            SweepParameter::XiAll => "xi_all".into(),
            SweepParameter::Level(i) => format!("q{i}_level"),
        }
    }

    pub fn apply(&self, model: &MarketModel, value: f64) -> Result<MarketModel> {
        let check = |i: usize| {
            if i == 0 || i > model.n_spreads() {
                Err(CtdError::validation(format!("sweep {} references a missing spread", self.label())))
            } else {
                Ok(())
            }
        };
        match *self {
            SweepParameter::XiAll => model.with_spread_xi(value),
            SweepParameter::Xi(i) => {
                check(i)?;
                Ok(model.with_spread(i, model.spreads[i - 1].with_xi(value)?))
            }
            SweepParameter::Level(i) => {
                check(i)?;
                let spec = &model.spreads[i - 1];
                let c = spec.mean_curve();
                let flat = SpreadCurve::constant(c.start(), c.end(), value)?;
                Ok(model.with_spread(i, spec.with_curve(flat)?))
            }
        }
    }
}

/// One sweep point; `derivatives[k]` belongs to the k-th requested target
/// and holds `(deterministic, common_factor)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRow {
    pub parameter: f64,
    pub ctd_det: f64,
    pub ctd_cf: f64,
    pub derivatives: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

/// Evaluates CTD factors and difference quotients along `values`.
#[allow(clippy::too_many_arguments)]
pub fn sensitivity_profile(
    model: &MarketModel,
    t0: f64,
    t_end: f64,
    sweep: SweepParameter,
    values: &[f64],
    targets: &[BumpTarget],
    epsilon: f64,
    settings: CfSettings,
) -> Result<Vec<ProfileRow>> {
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CtdError::validation("sweep values must be strictly increasing"));
    }
    values
        .par_iter()
        .map(|&v| {
            let m = sweep.apply(model, v)?;
            let ctd_det = ctd_deterministic(&m, t0, t_end)?;
            let ctd_cf = ctd_common_factor(&m, t0, t_end, settings)?;
            let mut derivatives = Vec::with_capacity(targets.len());
            let mut warnings = Vec::new();
            for &target in targets {
                let req = BumpRequest::new(target, epsilon)?;
                let d = ctd_sensitivity(&m, t0, t_end, req, SensitivityMethod::Deterministic, settings)?;
                let c = ctd_sensitivity(&m, t0, t_end, req, SensitivityMethod::CommonFactor, settings)?;
                warnings.extend(c.warning.clone());
                derivatives.push((d.value, c.value));
            }
            Ok(ProfileRow {
                parameter: v,
                ctd_det,
                ctd_cf,
                derivatives,
                warnings,
            })
        })
        .collect()
}
