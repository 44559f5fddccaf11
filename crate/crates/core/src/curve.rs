use serde::{Deserialize, Serialize};

use crate::error::{CtdError, Result};

/// Slack used when checking that a time lies inside a curve's domain.
pub const TIME_EPS: f64 = 1e-10;

/// Deterministic spread forecast, linear between nodes.
///
/// At a node the left-hand segment defines the slope; the first node uses
/// the first segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCurve", into = "RawCurve")]
pub struct SpreadCurve {
    times: Vec<f64>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCurve {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl TryFrom<RawCurve> for SpreadCurve {
    type Error = CtdError;
    fn try_from(raw: RawCurve) -> Result<Self> {
        SpreadCurve::new(raw.times, raw.values)
    }
}

impl From<SpreadCurve> for RawCurve {
    fn from(c: SpreadCurve) -> Self {
        RawCurve {
            times: c.times,
            values: c.values,
        }
    }
}

impl SpreadCurve {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(CtdError::validation("curve needs at least two nodes"));
        }
        if times.len() != values.len() {
            return Err(CtdError::validation(format!(
                "curve has {} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.iter().chain(&values).any(|x| !x.is_finite()) {
            return Err(CtdError::validation("curve contains non-finite entries"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CtdError::validation("curve times must be strictly increasing"));
        }
        Ok(Self { times, values })
    }

    pub fn constant(start: f64, end: f64, value: f64) -> Result<Self> {
        Self::new(vec![start, end], vec![value, value])
    }

    pub fn linear(start: f64, end: f64, v_start: f64, v_end: f64) -> Result<Self> {
        Self::new(vec![start, end], vec![v_start, v_end])
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn covers(&self, a: f64, b: f64) -> bool {
        a >= self.start() - TIME_EPS && b <= self.end() + TIME_EPS
    }

    pub fn check_covers(&self, a: f64, b: f64) -> Result<()> {
        if a < self.start() - TIME_EPS {
            return Err(self.domain_error(a));
        }
        if b > self.end() + TIME_EPS {
            return Err(self.domain_error(b));
        }
        Ok(())
    }

    fn domain_error(&self, t: f64) -> CtdError {
        CtdError::Domain {
            t,
            start: self.start(),
            end: self.end(),
        }
    }

    /// Index `k` of the segment `(t_k, t_{k+1}]` holding `t`; the first
    /// segment also holds `t_0`.
    fn segment(&self, t: f64) -> usize {
        let n = self.times.len();
        // first index with times[idx] >= t
        let idx = self.times.partition_point(|&x| x < t);
        idx.clamp(1, n - 1) - 1
    }

    /// Value at `t`, erroring outside the domain.
    pub fn value(&self, t: f64) -> Result<f64> {
        if !self.covers(t, t) {
            return Err(self.domain_error(t));
        }
        Ok(self.at(t))
    }

    /// Value at `t`; extrapolates linearly from the end segments. Callers
    /// validate coverage up front.
    #[inline]
    pub fn at(&self, t: f64) -> f64 {
        let k = self.segment(t);
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let (v0, v1) = (self.values[k], self.values[k + 1]);
        if t == t1 {
            return v1;
        }
        if t == t0 {
            return v0;
        }
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    /// Left derivative at `t` (right derivative at the first node).
    pub fn left_slope(&self, t: f64) -> Result<f64> {
        if !self.covers(t, t) {
            return Err(self.domain_error(t));
        }
        let k = self.segment(t);
        Ok((self.values[k + 1] - self.values[k]) / (self.times[k + 1] - self.times[k]))
    }

    /// Exact integral over `[a, b]` of the piecewise-linear interpolant.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return if b < a { -self.integral(b, a) } else { 0.0 };
        }
        let mut pts = vec![a];
        pts.extend(self.knots_between(a, b));
        pts.push(b);
        pts.windows(2)
            .map(|w| 0.5 * (w[1] - w[0]) * (self.at(w[0]) + self.at(w[1])))
            .sum()
    }

    /// Nodes strictly inside `(a, b)`.
    pub fn knots_between(&self, a: f64, b: f64) -> impl Iterator<Item = f64> + '_ {
        self.times
            .iter()
            .copied()
            .filter(move |&t| t > a + TIME_EPS && t < b - TIME_EPS)
    }

    /// Parallel shift of every node value.
    pub fn shifted(&self, delta: f64) -> Self {
        Self {
            times: self.times.clone(),
            values: self.values.iter().map(|v| v + delta).collect(),
        }
    }

    /// Same shape with the time axis translated by `dt`.
    pub fn time_translated(&self, dt: f64) -> Self {
        Self {
            times: self.times.iter().map(|t| t + dt).collect(),
            values: self.values.clone(),
        }
    }
}
