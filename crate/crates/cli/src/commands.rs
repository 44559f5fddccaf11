//! Command implementations. Each returns its artifacts in memory; nothing is
//! written unless the whole command succeeds.

use ctd_core::ctd_engine::{ctd_deterministic, price_family, Family};
use ctd_core::error::CtdError;
use ctd_core::hedging::{evaluate_portfolio_paths, hedge_report, synthetic_replication_pnl, HedgeReport, Instrument};
use ctd_core::montecarlo::{covariance_estimate, estimate, mc_ctd, payoff_samples, simulate, Payoff, PathBundle};
use ctd_core::sensitivity::sensitivity_profile;
use ctd_core::spread_model::{mean_under_piecewise_theta, theta_piecewise, MarketModel};

use crate::config::{CommandKind, ExperimentConfig};
use crate::output::{histogram, histogram_chart, line_chart, num, Artifact, Series, Table};
use crate::validation::{run_suite, Budget};
use crate::RunError;

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Also emit SVG charts.
    pub svg: bool,
}

#[derive(Debug)]
pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    /// Set by `acceptance` when a case failed.
    pub failed: bool,
}

pub fn run(cfg: &ExperimentConfig, command: CommandKind, opts: RunOptions) -> Result<Outcome, RunError> {
    let mut failed = false;
    let mut artifacts = match command {
        CommandKind::Price => price(cfg)?,
        CommandKind::Sensitivity => sensitivity(cfg, opts)?,
        CommandKind::Hedge => hedge(cfg, opts)?,
        CommandKind::SimulatePnl => simulate_pnl(cfg, opts)?,
        CommandKind::CalibrateTheta => calibrate_theta(cfg)?,
        CommandKind::Acceptance => {
            let report = run_suite(&cfg.acceptance.filter, &Budget::full());
            failed = !report.passed();
            vec![
                Artifact::new("validation_report.csv", report.to_csv()),
                Artifact::new("validation_report.txt", report.to_text()),
            ]
        }
    };
    artifacts.push(Artifact::new("effective_config.toml", cfg.to_toml()));
    Ok(Outcome { artifacts, failed })
}

fn price(cfg: &ExperimentConfig) -> Result<Vec<Artifact>, RunError> {
    let model = cfg.model()?;
    let t0 = cfg.horizon.t0;
    let mut maturities = if cfg.price.maturities.is_empty() {
        vec![cfg.horizon.maturity]
    } else {
        cfg.price.maturities.clone()
    };
    maturities.sort_by(f64::total_cmp);
    maturities.dedup();
    let (quotes, diag) = price_family(&Family::standard(&model, t0), t0, &maturities, cfg.cf_settings())?;
    let mut t = Table::new([
        "method",
        "t0",
        "T",
        "ctd",
        "stderr",
        "mean_integral",
        "psi",
        "gamma_min",
        "gamma_max",
        "gamma_clamped_nodes",
        "max_cov_residual",
    ]);
    for &m in &maturities {
        let det = ctd_deterministic(&model, t0, m)?;
        t.push(vec![
            "deterministic".into(),
            num(t0),
            num(m),
            num(det),
            String::new(),
            num(-det.ln()),
            num(0.0),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ]);
    }
    for q in &quotes {
        t.push(vec![
            "common_factor".into(),
            num(t0),
            num(q.maturity),
            num(q.value),
            String::new(),
            num(q.mean_integral),
            num(q.psi),
            num(diag.gamma_min),
            num(diag.gamma_max),
            diag.gamma_clamped_nodes.to_string(),
            num(diag.max_cov_residual),
        ]);
    }
    if cfg.price.monte_carlo {
        let bundle = simulate(&model, &cfg.simulation_plan(*maturities.last().unwrap()))?;
        for &m in &maturities {
            let e = mc_ctd(&bundle, t0, m)?;
            t.push(vec![
                "monte_carlo".into(),
                num(t0),
                num(m),
                num(e.mean),
                num(e.stderr),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ]);
        }
    }
    Ok(vec![t.into_artifact("price.csv")])
}

fn sensitivity(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Vec<Artifact>, RunError> {
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
    let mut header = vec![sweep.label(), "ctd_det".into(), "ctd_cf".into()];
    for t in &targets {
        header.push(format!("d_{}_det", t.label()));
        header.push(format!("d_{}_cf", t.label()));
    }
    header.push("warning".into());
    let mut table = Table::new(header);
    for r in &rows {
        let mut row = vec![num(r.parameter), num(r.ctd_det), num(r.ctd_cf)];
        for (d, c) in &r.derivatives {
            row.push(num(*d));
            row.push(num(*c));
        }
        row.push(r.warnings.join("; "));
        table.push(row);
    }
    let mut out = vec![table.into_artifact("sensitivity.csv")];
    if opts.svg {
        let level = vec![
            Series {
                label: "deterministic".into(),
                points: rows.iter().map(|r| (r.parameter, r.ctd_det)).collect(),
            },
            Series {
                label: "common factor".into(),
                points: rows.iter().map(|r| (r.parameter, r.ctd_cf)).collect(),
            },
        ];
        out.push(Artifact::new("sensitivity_ctd.svg", line_chart("CTD discount factor", &sweep.label(), &level)));
        let mut deriv = Vec::new();
        for (k, t) in targets.iter().enumerate() {
            deriv.push(Series {
                label: format!("{} det", t.label()),
                points: rows.iter().map(|r| (r.parameter, r.derivatives[k].0)).collect(),
            });
            deriv.push(Series {
                label: format!("{} cf", t.label()),
                points: rows.iter().map(|r| (r.parameter, r.derivatives[k].1)).collect(),
            });
        }
        out.push(Artifact::new("sensitivity_derivative.svg", line_chart("difference quotients", &sweep.label(), &deriv)));
    }
    Ok(out)
}

fn selected(report: &HedgeReport, strategy: &str) -> Result<Vec<usize>, CtdError> {
    let names: Vec<&str> = report.strategies.iter().map(|s| s.portfolio.name.as_str()).collect();
    let pick: Vec<usize> = match strategy {
        "all" => (0..names.len()).collect(),
        "basic" => (0..names.len()).filter(|&k| names[k].starts_with("basic")).collect(),
        s => names.iter().position(|n| *n == s).into_iter().collect(),
    };
    if pick.is_empty() {
        return Err(CtdError::validation(format!(
            "unknown strategy '{strategy}' (expected all, basic or one of {})",
            names.join(", ")
        )));
    }
    Ok(pick)
}

/// Pathwise `P~^c + sum alpha_i Q~_i` at `T`, discounted to `t0`.
fn pi_samples(bundle: &PathBundle, model: &MarketModel, alpha: &[f64], t0: f64, t_end: f64) -> Result<Vec<f64>, CtdError> {
    let mut x = payoff_samples(bundle, Payoff::CollateralBond, t0, t_end)?;
    for (i, &a) in alpha.iter().enumerate() {
        if a == 0.0 || i > model.n_spreads() {
            continue;
        }
        let q = payoff_samples(bundle, Payoff::Bond(i), t0, t_end)?;
        x.iter_mut().zip(&q).for_each(|(v, b)| *v += a * b);
    }
    Ok(x)
}

fn hedge(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Vec<Artifact>, RunError> {
    let model = cfg.model()?;
    let (t0, t_end) = (cfg.horizon.t0, cfg.horizon.maturity);
    let h = &cfg.hedge;
    let mut report = hedge_report(&model, t0, t_end, h.alpha0_policy, h.bound, cfg.cf_settings())?;
    let pick = selected(&report, &h.strategy)?;
    let n = model.n_spreads();

    let bundle = if h.evaluate_paths {
        Some(simulate(&model, &cfg.simulation_plan(t_end))?)
    } else {
        None
    };
    let mut realized = vec![None; report.strategies.len()];
    if let Some(b) = &bundle {
        let pc = payoff_samples(b, Payoff::CollateralBond, t0, t_end)?;
        let var_pc = covariance_estimate(&pc, &pc, b.antithetic).mean;
        report.form = report.form.clone().with_constant(var_pc);
        for &k in &pick {
            let x = pi_samples(b, &model, &report.strategies[k].equivalent_alpha, t0, t_end)?;
            realized[k] = Some(covariance_estimate(&x, &x, b.antithetic));
        }
    }

    let mut weights = Table::new(["index", "alpha", "bound", "interior", "alpha0_degenerate", "alpha0_policy", "objective"]);
    for (i, a) in report.weights.alpha.iter().enumerate() {
        weights.push(vec![
            i.to_string(),
            num(*a),
            num(h.bound),
            report.weights.interior.to_string(),
            report.weights.alpha0_degenerate.to_string(),
            report.weights.alpha0_policy.name().into(),
            num(report.weights.objective),
        ]);
    }

    let mut header = vec!["strategy".to_string()];
    header.extend((0..=n).map(|i| format!("alpha_{i}")));
    header.extend(
        [
            "objective",
            "predicted_variance",
            "realized_variance",
            "realized_variance_stderr",
            "initial_cash",
            "terminal_value",
        ]
        .map(String::from),
    );
    let mut strategies = Table::new(header);
    for &k in &pick {
        let s = &report.strategies[k];
        let mut row = vec![s.portfolio.name.clone()];
        row.extend(s.equivalent_alpha.iter().map(|a| num(*a)));
        row.push(num(s.objective));
        row.push(report.form.variance(&s.equivalent_alpha).map(num).unwrap_or_default());
        row.push(realized[k].map(|e| num(e.mean)).unwrap_or_default());
        row.push(realized[k].map(|e| num(e.stderr)).unwrap_or_default());
        row.push(num(s.portfolio.initial_cash));
        row.push(s.terminal_value.map(num).unwrap_or_default());
        strategies.push(row);
    }

    let mut holdings = Table::new(["strategy", "instrument", "underlying", "delivery", "units"]);
    for &k in &pick {
        let p = &report.strategies[k].portfolio;
        for hd in &p.holdings {
            let (kind, und, del) = match hd.instrument {
                Instrument::CollateralBond => ("collateral_bond", String::new(), String::new()),
                Instrument::Bond(i) => ("bond", i.to_string(), String::new()),
                Instrument::Forward { underlying, delivery } => ("forward", underlying.to_string(), num(delivery)),
            };
            holdings.push(vec![p.name.clone(), kind.into(), und, del, num(hd.units)]);
        }
    }

    let mut schedule = Table::new(["start", "end", "index"]);
    let sched = &report.schedule;
    for (k, &i) in sched.indices.iter().enumerate() {
        let end = sched.times.get(k + 1).copied().unwrap_or(sched.horizon);
        schedule.push(vec![num(sched.times[k]), num(end), i.to_string()]);
    }

    let mut header = vec!["row".to_string(), "bond_price".into(), "b".into()];
    header.extend((0..=n).map(|j| format!("q_{j}")));
    let mut form = Table::new(header);
    for i in 0..=n {
        let mut row = vec![i.to_string(), num(report.form.bond_prices[i]), num(report.form.b[i])];
        row.extend((0..=n).map(|j| num(report.form.q[(i, j)])));
        form.push(row);
    }

    let mut out = vec![
        weights.into_artifact("hedge_weights.csv"),
        strategies.into_artifact("hedge_strategies.csv"),
        holdings.into_artifact("hedge_holdings.csv"),
        schedule.into_artifact("crossing_schedule.csv"),
        form.into_artifact("quadratic_form.csv"),
    ];

    if let Some(b) = &bundle {
        let portfolios: Vec<_> = pick.iter().map(|&k| report.strategies[k].portfolio.clone()).collect();
        let ev = evaluate_portfolio_paths(&model, &portfolios, b, &h.revaluation())?;
        let mut stats = Table::new(["time", "strategy", "mean", "sd", "sd_stderr", "mean_ex_cash"]);
        let mut samples = Table::new(["time", "strategy", "path", "value"]);
        for (k, &t) in ev.times.iter().enumerate() {
            for p in &ev.portfolios {
                stats.push(vec![
                    num(t),
                    p.name.clone(),
                    num(p.mean[k]),
                    num(p.sd[k]),
                    num(p.sd_stderr[k]),
                    num(p.mean_ex_cash[k]),
                ]);
                for (j, path) in p.samples.iter().enumerate() {
                    samples.push(vec![num(t), p.name.clone(), j.to_string(), num(path[k])]);
                }
            }
        }
        out.push(stats.into_artifact("portfolio_paths.csv"));
        out.push(samples.into_artifact("portfolio_samples.csv"));
        if opts.svg {
            let series = |f: &dyn Fn(&ctd_core::hedging::PortfolioPathStats) -> &Vec<f64>| -> Vec<Series> {
                ev.portfolios
                    .iter()
                    .map(|p| Series {
                        label: p.name.clone(),
                        points: ev.times.iter().copied().zip(f(p).iter().copied()).collect(),
                    })
                    .collect()
            };
            out.push(Artifact::new("portfolio_sd.svg", line_chart("portfolio standard deviation", "t", &series(&|p| &p.sd))));
            out.push(Artifact::new("portfolio_mean.svg", line_chart("portfolio expectation", "t", &series(&|p| &p.mean))));
        }
    }
    Ok(out)
}

fn simulate_pnl(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Vec<Artifact>, RunError> {
    let model = cfg.model()?;
    let swap = cfg.swap()?;
    let p = &cfg.simulate_pnl;
    if !(p.rebalance_step > 0.0) {
        return Err(CtdError::validation("simulate_pnl.rebalance_step must be positive").into());
    }
    let bundle = simulate(&model, &cfg.simulation_plan(cfg.horizon.maturity))?;
    let t_first = swap.start.max(cfg.horizon.t0);
    let on_step = |t: f64| {
        let k = ((t - t_first) / p.rebalance_step).round();
        ((t - t_first) - k * p.rebalance_step).abs() < 1e-9
    };
    let grid: Vec<f64> = bundle
        .times
        .iter()
        .copied()
        .filter(|&t| t >= t_first - 1e-9 && t <= swap.maturity() + 1e-9)
        .filter(|&t| on_step(t) || swap.payment_dates.iter().any(|d| (d - t).abs() < 1e-9))
        .collect();
    let rev = cfg.hedge.revaluation();
    let dists = synthetic_replication_pnl(&model, &swap, &p.methods, &bundle, &grid, &rev)?;

    let mut summary = Table::new(["method", "mean", "mean_stderr", "sd", "paths"]);
    for d in &dists {
        let e = estimate(&d.terminal, bundle.antithetic);
        summary.push(vec![
            d.method.name().into(),
            num(d.mean),
            num(e.stderr),
            num(d.sd),
            d.terminal.len().to_string(),
        ]);
    }
    let mut header = vec!["path".to_string()];
    header.extend(dists.iter().map(|d| d.method.name().to_string()));
    let mut terminal = Table::new(header);
    for k in 0..bundle.n_paths {
        let mut row = vec![k.to_string()];
        row.extend(dists.iter().map(|d| num(d.terminal[k])));
        terminal.push(row);
    }
    let samples: Vec<&[f64]> = dists.iter().map(|d| d.terminal.as_slice()).collect();
    let (edges, counts) = histogram(&samples, p.histogram_bins);
    let mut header = vec!["bin_low".to_string(), "bin_high".into()];
    header.extend(dists.iter().map(|d| d.method.name().to_string()));
    let mut hist = Table::new(header);
    for b in 0..counts.first().map_or(0, |c| c.len()) {
        let mut row = vec![num(edges[b]), num(edges[b + 1])];
        row.extend(counts.iter().map(|c| c[b].to_string()));
        hist.push(row);
    }
    let mut out = vec![
        summary.into_artifact("pnl_summary.csv"),
        terminal.into_artifact("pnl_terminal.csv"),
        hist.into_artifact("pnl_histogram.csv"),
    ];
    if opts.svg {
        let labels: Vec<&str> = dists.iter().map(|d| d.method.name()).collect();
        out.push(Artifact::new(
            "pnl_histogram.svg",
            histogram_chart("terminal P&L", "P&L", &edges, &labels, &counts),
        ));
    }
    Ok(out)
}

fn calibrate_theta(cfg: &ExperimentConfig) -> Result<Vec<Artifact>, RunError> {
    let model = cfg.model()?;
    let (t0, t_end) = (cfg.horizon.t0, cfg.horizon.maturity);
    let n = cfg.calibrate_theta.intervals;
    if n == 0 {
        return Err(CtdError::validation("calibrate_theta.intervals must be positive").into());
    }
    let grid: Vec<f64> = (0..=n).map(|k| t0 + (t_end - t0) * k as f64 / n as f64).collect();
    let mut t = Table::new(["process", "t_start", "t_end", "theta", "mean_target", "mean_reproduced", "abs_error"]);
    for p in 0..=model.n_spreads() {
        let spec = model.process(p);
        let theta = theta_piecewise(spec, &grid)?;
        let means = mean_under_piecewise_theta(spec, &grid, &theta);
        let name = if p == 0 { "r0".to_string() } else { format!("q{p}") };
        for k in 0..n {
            let target = spec.mean_curve().at(grid[k + 1]);
            t.push(vec![
                name.clone(),
                num(grid[k]),
                num(grid[k + 1]),
                num(theta[k]),
                num(target),
                num(means[k + 1]),
                num((means[k + 1] - target).abs()),
            ]);
        }
    }
    Ok(vec![t.into_artifact("theta.csv")])
}
