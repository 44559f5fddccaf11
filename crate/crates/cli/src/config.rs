//! Experiment configuration files.
//!
//! Configs are TOML. `--set key=value` overrides are applied to the parsed
//! document before it is checked against the schema, so they accept the same
//! dotted keys as the file (`model.spreads.1.xi = 0.002`).

use std::collections::BTreeMap;
use std::path::Path;

use ctd_core::ctd_engine::CfSettings;
use ctd_core::curve::SpreadCurve;
use ctd_core::hedging::{Alpha0Policy, RevaluationSettings};
use ctd_core::instruments::{CtdMethod, SwapSpec};
use ctd_core::montecarlo::SimulationPlan;
use ctd_core::sensitivity::{BumpTarget, SweepParameter};
use ctd_core::spread_model::{CorrelationMatrix, HullWhiteSpec, MarketModel};
use ctd_core::error::CtdError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Configs shipped with the binary, addressable by name.
pub const BUNDLED: [(&str, &str); 5] = [
    ("experiment1", include_str!("../../../configs/experiment1.toml")),
    ("experiment2", include_str!("../../../configs/experiment2.toml")),
    ("fig2_sensitivity", include_str!("../../../configs/fig2_sensitivity.toml")),
    ("fig5_sensitivity", include_str!("../../../configs/fig5_sensitivity.toml")),
    ("swap_pnl", include_str!("../../../configs/swap_pnl.toml")),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownKey {
    pub path: String,
    pub line: Option<usize>,
    pub suggestion: Option<String>,
}

impl std::fmt::Display for UnknownKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "unknown key `{}`", self.path)?;
        if let Some(l) = self.line {
            write!(f, " (line {l})")?;
        }
        if let Some(s) = &self.suggestion {
            write!(f, "; did you mean `{s}`?")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config syntax error: {0}")]
    Syntax(String),
    #[error("{}", list_unknown(.0))]
    UnknownKeys(Vec<UnknownKey>),
    #[error("invalid value for `{key}`{}: {message}", line_suffix(*.line))]
    Invalid {
        key: String,
        line: Option<usize>,
        message: String,
    },
    #[error("bad override `{0}` (expected key=value)")]
    Override(String),
}

fn list_unknown(keys: &[UnknownKey]) -> String {
    keys.iter().map(|k| k.to_string()).collect::<Vec<_>>().join("\n")
}

fn line_suffix(line: Option<usize>) -> String {
    line.map(|l| format!(" (line {l})")).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Price,
    Sensitivity,
    Hedge,
    SimulatePnl,
    CalibrateTheta,
    Acceptance,
}

impl CommandKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Price => "price",
            Self::Sensitivity => "sensitivity",
            Self::Hedge => "hedge",
            Self::SimulatePnl => "simulate-pnl",
            Self::CalibrateTheta => "calibrate-theta",
            Self::Acceptance => "acceptance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Command run by `ctd run`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<CommandKind>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub horizon: HorizonConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub price: PriceConfig,
    #[serde(default)]
    pub sensitivity: SensitivityConfig,
    #[serde(default)]
    pub hedge: HedgeConfig,
    #[serde(default)]
    pub simulate_pnl: PnlConfig,
    #[serde(default)]
    pub calibrate_theta: ThetaConfig,
    #[serde(default)]
    pub acceptance: AcceptanceConfig,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonConfig {
    #[serde(default)]
    pub t0: f64,
    pub maturity: f64,
    /// Common-factor pricing grid resolution.
    #[serde(default = "default_nodes")]
    pub nodes_per_year: usize,
}

fn default_nodes() -> usize {
    CfSettings::default().nodes_per_year
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub domestic: ProcessConfig,
    pub spreads: Vec<ProcessConfig>,
    /// Full correlation matrix, domestic rate first. Identity when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessConfig {
    pub kappa: f64,
    pub xi: f64,
    pub curve: CurveConfig,
}

/// Piecewise-linear forecast through `(times, values)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveConfig {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub paths: usize,
    pub steps_per_year: usize,
    /// Keep every n-th time step.
    pub record_every: usize,
    pub antithetic: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            paths: 100_000,
            steps_per_year: 48,
            record_every: 12,
            antithetic: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PriceConfig {
    /// Maturities to price; the horizon maturity when empty.
    #[serde(default)]
    pub maturities: Vec<f64>,
    /// Adds a Monte Carlo row per maturity.
    #[serde(default)]
    pub monte_carlo: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensitivityConfig {
    /// `xi1`, `xi`, `q2_level`, ...
    pub sweep: String,
    pub from: f64,
    pub to: f64,
    pub count: usize,
    /// Bump targets; derived from the sweep when empty.
    #[serde(default)]
    pub targets: Vec<String>,
    pub epsilon: f64,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            sweep: "q2_level".into(),
            from: 0.0,
            to: 0.02,
            count: 41,
            targets: Vec::new(),
            epsilon: ctd_core::sensitivity::DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HedgeConfig {
    /// `all`, `none`, `basic`, `det` or `stoch`.
    pub strategy: String,
    pub alpha0_policy: Alpha0Policy,
    /// Weights are confined to `[-bound, bound]`.
    pub bound: f64,
    /// Revalue the portfolios along simulated paths.
    pub evaluate_paths: bool,
    pub sample_paths: usize,
    pub grid_points: usize,
    pub grid_width_sd: f64,
    pub revaluation_nodes_per_year: usize,
}

impl Default for HedgeConfig {
    fn default() -> Self {
        let r = RevaluationSettings::default();
        Self {
            strategy: "all".into(),
            alpha0_policy: Alpha0Policy::CashNeutral,
            bound: 1.0,
            evaluate_paths: true,
            sample_paths: r.sample_paths,
            grid_points: r.points_per_dim,
            grid_width_sd: r.width_sd,
            revaluation_nodes_per_year: r.cf.nodes_per_year,
        }
    }
}

impl HedgeConfig {
    pub fn revaluation(&self) -> RevaluationSettings {
        RevaluationSettings {
            cf: CfSettings {
                nodes_per_year: self.revaluation_nodes_per_year,
            },
            points_per_dim: self.grid_points,
            width_sd: self.grid_width_sd,
            sample_paths: self.sample_paths,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwapConfig {
    pub notional: f64,
    pub fixed_rate: f64,
    pub start: f64,
    /// Years between payments.
    pub period: f64,
    pub payments: usize,
    pub payer: bool,
}

impl Default for SwapConfig {
    fn default() -> Self {
        Self {
            notional: 1.0,
            fixed_rate: 0.01,
            start: 0.0,
            period: 1.0,
            payments: 10,
            payer: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PnlConfig {
    pub swap: SwapConfig,
    /// Spacing of the rebalancing grid; payment dates are added.
    pub rebalance_step: f64,
    pub methods: Vec<CtdMethod>,
    pub histogram_bins: usize,
}

impl Default for PnlConfig {
    fn default() -> Self {
        Self {
            swap: SwapConfig::default(),
            rebalance_step: 0.25,
            methods: vec![CtdMethod::None, CtdMethod::Deterministic, CtdMethod::CommonFactor],
            histogram_bins: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThetaConfig {
    /// Number of calibration intervals over the horizon.
    pub intervals: usize,
}

impl Default for ThetaConfig {
    fn default() -> Self {
        Self { intervals: 120 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcceptanceConfig {
    pub filter: String,
}

impl Default for AcceptanceConfig {
    fn default() -> Self {
        Self { filter: "all".into() }
    }
}

/// Keys accepted in each table, for suggestions on typos. Checked against the
/// serialized default config in tests.
fn known_keys(table: &str) -> &'static [&'static str] {
    match table {
        "" => &[
            "description",
            "command",
            "seed",
            "horizon",
            "model",
            "simulation",
            "price",
            "sensitivity",
            "hedge",
            "simulate_pnl",
            "calibrate_theta",
            "acceptance",
        ],
        "horizon" => &["t0", "maturity", "nodes_per_year"],
        "model" => &["domestic", "spreads", "correlation"],
        "process" => &["kappa", "xi", "curve"],
        "curve" => &["times", "values"],
        "simulation" => &["paths", "steps_per_year", "record_every", "antithetic"],
        "price" => &["maturities", "monte_carlo"],
        "sensitivity" => &["sweep", "from", "to", "count", "targets", "epsilon"],
        "hedge" => &[
            "strategy",
            "alpha0_policy",
            "bound",
            "evaluate_paths",
            "sample_paths",
            "grid_points",
            "grid_width_sd",
            "revaluation_nodes_per_year",
        ],
        "simulate_pnl" => &["swap", "rebalance_step", "methods", "histogram_bins"],
        "swap" => &["notional", "fixed_rate", "start", "period", "payments", "payer"],
        "calibrate_theta" => &["intervals"],
        "acceptance" => &["filter"],
        _ => &[],
    }
}

/// Schema table a dotted parent path belongs to.
fn table_kind(parent: &[&str]) -> &'static str {
    let named: Vec<&str> = parent.iter().copied().filter(|s| s.parse::<usize>().is_err()).collect();
    match named.as_slice() {
        [] => "",
        ["model", "domestic"] | ["model", "spreads"] => "process",
        ["model", _, "curve"] => "curve",
        ["simulate_pnl", "swap"] => "swap",
        [one] => known_table(one),
        _ => "?",
    }
}

fn known_table(name: &str) -> &'static str {
    known_keys("")
        .iter()
        .find(|k| **k == name)
        .copied()
        .unwrap_or("?")
}

fn suggest(key: &str, candidates: &[&str]) -> Option<String> {
    candidates
        .iter()
        .map(|c| (strsim::jaro_winkler(key, c), *c))
        .filter(|(s, _)| *s > 0.8)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c.to_string())
}

/// 1-based line of the first assignment or table header naming `key`.
fn locate(source: &str, path: &str) -> Option<usize> {
    let key = path.rsplit('.').find(|s| s.parse::<usize>().is_err())?;
    source.lines().position(|line| {
        let l = line.trim_start();
        if l.starts_with('#') {
            return false;
        }
        let header = l.starts_with('[') && l.trim_end_matches(']').ends_with(key);
        let assign = l
            .split([',', '{'])
            .any(|part| part.split('=').next().map(str::trim) == Some(key) && part.contains('='));
        header || assign
    })
    .map(|i| i + 1)
}

/// Applies one `key=value` override to a parsed document.
pub fn apply_override(doc: &mut toml::Value, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.into()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::Override(spec.into()));
    }
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = doc;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            toml::Value::Table(t) => {
                if last {
                    t.insert(part.to_string(), value);
                    return Ok(());
                }
                t.entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()))
            }
            toml::Value::Array(a) => {
                let idx: usize = part.parse().map_err(|_| ConfigError::Override(spec.into()))?;
                let len = a.len();
                let slot = a.get_mut(idx).ok_or_else(|| ConfigError::Invalid {
                    key: key.into(),
                    line: None,
                    message: format!("index {idx} out of range (length {len})"),
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(ConfigError::Override(spec.into())),
        };
    }
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

impl ExperimentConfig {
    /// Reads a config file, or a bundled config when `name` matches one and no
    /// such file exists.
    pub fn load(name: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let source = match std::fs::read_to_string(name) {
            Ok(s) => s,
            Err(e) => match bundled(name) {
                Some(s) => s.to_string(),
                None => {
                    return Err(ConfigError::Io {
                        path: name.into(),
                        source: e,
                    })
                }
            },
        };
        Self::parse(&source, overrides)
    }

    pub fn parse(source: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut doc: toml::Value = toml::from_str::<toml::Table>(source)
            .map(toml::Value::Table)
            .map_err(|e| ConfigError::Syntax(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut unknown = Vec::new();
        let cfg: Self = serde_ignored::deserialize(doc, |path| {
            let path = path.to_string();
            let parts: Vec<&str> = path.split('.').collect();
            let (leaf, parent) = parts.split_last().unwrap();
            unknown.push(UnknownKey {
                line: locate(source, &path),
                suggestion: suggest(leaf, known_keys(table_kind(parent))),
                path,
            });
        })
        .map_err(|e| {
            let msg = e.to_string();
            let key = msg
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "config".into());
            ConfigError::Invalid {
                line: locate(source, &key),
                key,
                message: msg.trim().to_string(),
            }
        })?;
        if !unknown.is_empty() {
            return Err(ConfigError::UnknownKeys(unknown));
        }
        cfg.validate(source)?;
        Ok(cfg)
    }

    fn validate(&self, source: &str) -> Result<(), ConfigError> {
        let invalid = |key: &str, message: String| ConfigError::Invalid {
            key: key.to_string(),
            line: locate(source, key),
            message,
        };
        if !(self.horizon.maturity > self.horizon.t0) {
            return Err(invalid("horizon.maturity", "must exceed horizon.t0".into()));
        }
        if self.horizon.nodes_per_year == 0 {
            return Err(invalid("horizon.nodes_per_year", "must be positive".into()));
        }
        self.build_model().map_err(|e| match e {
            ModelError { key, err } => invalid(&key, err.to_string()),
        })?;
        Ok(())
    }

    /// Builds the market model, naming the offending block on failure.
    pub fn model(&self) -> Result<MarketModel, CtdError> {
        self.build_model().map_err(|e| CtdError::validation(format!("{}: {}", e.key, e.err)))
    }

    fn build_model(&self) -> Result<MarketModel, ModelError> {
        let process = |key: String, p: &ProcessConfig| -> Result<HullWhiteSpec, ModelError> {
            let curve = SpreadCurve::new(p.curve.times.clone(), p.curve.values.clone()).map_err(|err| ModelError {
                key: format!("{key}.curve"),
                err,
            })?;
            HullWhiteSpec::new(p.kappa, p.xi, curve).map_err(|err| ModelError { key, err })
        };
        let domestic = process("model.domestic".into(), &self.model.domestic)?;
        let spreads = self
            .model
            .spreads
            .iter()
            .enumerate()
            .map(|(i, p)| process(format!("model.spreads.{i}"), p))
            .collect::<Result<Vec<_>, _>>()?;
        let n = spreads.len() + 1;
        let corr = match &self.model.correlation {
            Some(rows) => CorrelationMatrix::new(rows.clone()),
            None => Ok(CorrelationMatrix::identity(n)),
        }
        .map_err(|err| ModelError {
            key: "model.correlation".into(),
            err,
        })?;
        let model = MarketModel::new(domestic, spreads, corr).map_err(|err| ModelError {
            key: "model".into(),
            err,
        })?;
        model
            .check_horizon(self.horizon.t0, self.horizon.maturity)
            .map_err(|err| ModelError {
                key: "horizon.maturity".into(),
                err,
            })?;
        Ok(model)
    }

    pub fn cf_settings(&self) -> CfSettings {
        CfSettings {
            nodes_per_year: self.horizon.nodes_per_year,
        }
    }

    /// Simulation plan over `[t0, horizon]`.
    pub fn simulation_plan(&self, horizon: f64) -> SimulationPlan {
        let mut plan = SimulationPlan::new(
            self.simulation.paths,
            self.simulation.steps_per_year,
            horizon,
            self.seed,
        );
        plan.start = self.horizon.t0;
        plan.record_every = self.simulation.record_every;
        plan.antithetic = self.simulation.antithetic;
        plan
    }

    pub fn swap(&self) -> Result<SwapSpec, CtdError> {
        let s = &self.simulate_pnl.swap;
        SwapSpec::regular(s.notional, s.fixed_rate, s.start, s.period, s.payments, s.payer)
    }

    /// Sweep parameter, values and bump targets of the sensitivity block.
    pub fn sweep(&self) -> Result<(SweepParameter, Vec<f64>, Vec<BumpTarget>), CtdError> {
        let s = &self.sensitivity;
        let sweep = SweepParameter::parse(&s.sweep)?;
        if s.count < 2 || !(s.to > s.from) {
            return Err(CtdError::validation("sensitivity sweep needs count >= 2 and to > from"));
        }
        let values = (0..s.count)
            .map(|k| s.from + (s.to - s.from) * k as f64 / (s.count - 1) as f64)
            .collect();
        let targets = if s.targets.is_empty() {
            match sweep {
                SweepParameter::Level(i) => vec![BumpTarget::MeanLevel(i)],
                _ => (1..=self.model.spreads.len()).map(BumpTarget::Xi).collect(),
            }
        } else {
            s.targets.iter().map(|t| BumpTarget::parse(t)).collect::<Result<_, _>>()?
        };
        Ok((sweep, values, targets))
    }

    /// Effective config with every default written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

struct ModelError {
    key: String,
    err: CtdError,
}

pub fn bundled(name: &str) -> Option<&'static str> {
    let stem = Path::new(name)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(name);
    BUNDLED.iter().find(|(n, _)| *n == stem).map(|(_, s)| *s)
}

/// Flattened `key -> value` view, used to compare configs in tests.
pub fn flatten(doc: &toml::Value) -> BTreeMap<String, String> {
    fn walk(prefix: &str, v: &toml::Value, out: &mut BTreeMap<String, String>) {
        match v {
            toml::Value::Table(t) => {
                for (k, v) in t {
                    let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&p, v, out);
                }
            }
            toml::Value::Array(a) if a.iter().all(|x| x.is_table()) && !a.is_empty() => {
                for (i, v) in a.iter().enumerate() {
                    walk(&format!("{prefix}.{i}"), v, out);
                }
            }
            other => {
                out.insert(prefix.to_string(), other.to_string());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", doc, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"
seed = 7

[horizon]
maturity = 10.0

[model.domestic]
kappa = 0.1
xi = 0.0
curve = { times = [0.0, 10.0], values = [0.0, 0.0] }

[[model.spreads]]
kappa = 0.01
xi = 0.002
curve = { times = [0.0, 10.0], values = [0.01, 0.01] }
"#
    }

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::parse(minimal(), &[]).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.horizon.nodes_per_year, 48);
        assert_eq!(c.hedge.alpha0_policy, Alpha0Policy::CashNeutral);
        assert_eq!(c.model().unwrap().n_spreads(), 1);
    }

    #[test]
    fn unknown_keys_are_listed_with_suggestions() {
        let src = minimal().replace("kappa = 0.01", "kapa = 0.01\nkappa = 0.01") + "\n[simulation]\npath = 5\n";
        let err = ExperimentConfig::parse(&src, &[]).unwrap_err();
        let ConfigError::UnknownKeys(keys) = err else {
            panic!("{err}")
        };
        assert_eq!(keys.len(), 2);
        assert_eq!(keys[0].path, "model.spreads.0.kapa");
        assert_eq!(keys[0].suggestion.as_deref(), Some("kappa"));
        let line = src.lines().position(|l| l.starts_with("kapa")).unwrap() + 1;
        assert_eq!(keys[0].line, Some(line));
        assert_eq!(keys[1].suggestion.as_deref(), Some("paths"));
    }

    #[test]
    fn invalid_values_name_key_and_line() {
        let src = minimal().replace("xi = 0.002", "xi = -0.002");
        let err = ExperimentConfig::parse(&src, &[]).unwrap_err();
        match err {
            ConfigError::Invalid { key, line, .. } => {
                assert_eq!(key, "model.spreads.0");
                assert!(line.is_some());
            }
            e => panic!("{e}"),
        }
        let short = minimal().replace("maturity = 10.0", "maturity = 12.0");
        assert!(matches!(
            ExperimentConfig::parse(&short, &[]),
            Err(ConfigError::Invalid { .. })
        ));
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let c = ExperimentConfig::parse(
            minimal(),
            &["model.spreads.0.xi=0.004".into(), "hedge.strategy=stoch".into(), "seed = 9".into()],
        )
        .unwrap();
        assert_eq!(c.model.spreads[0].xi, 0.004);
        assert_eq!(c.hedge.strategy, "stoch");
        assert_eq!(c.seed, 9);
        assert!(ExperimentConfig::parse(minimal(), &["noequals".into()]).is_err());
        assert!(matches!(
            ExperimentConfig::parse(minimal(), &["model.spreads.3.xi=1".into()]),
            Err(ConfigError::Invalid { .. })
        ));
    }

    #[test]
    fn effective_config_round_trips() {
        for (name, src) in BUNDLED {
            let c = ExperimentConfig::parse(src, &[]).unwrap_or_else(|e| panic!("{name}: {e}"));
            let again = ExperimentConfig::parse(&c.to_toml(), &[]).unwrap();
            assert_eq!(c, again, "{name}");
        }
    }

    #[test]
    fn known_key_tables_match_schema() {
        let c = ExperimentConfig::parse(BUNDLED[0].1, &[]).unwrap();
        let doc: toml::Value = toml::from_str::<toml::Table>(&c.to_toml()).map(toml::Value::Table).unwrap();
        for key in flatten(&doc).keys() {
            let parts: Vec<&str> = key.split('.').collect();
            let (leaf, parent) = parts.split_last().unwrap();
            let kind = table_kind(parent);
            assert!(known_keys(kind).contains(leaf), "{key} missing from table {kind:?}");
        }
    }
}
