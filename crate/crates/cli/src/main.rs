use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use ctd_cli::config::ExperimentConfig;
use ctd_cli::output::write_artifacts;
use ctd_cli::validation::{run_suite, Budget};
use ctd_cli::{run, CommandKind, RunError, RunOptions, EXIT_CHECK_FAILED};

/// Collateral choice (cheapest-to-deliver) discounting, sensitivities and hedging.
#[derive(Parser)]
#[command(name = "ctd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// CTD discount factors: deterministic, common-factor and optionally Monte Carlo.
    Price(Common),
    /// Bump-and-revalue sensitivities over a parameter sweep.
    Sensitivity {
        #[command(flatten)]
        common: Common,
        /// Swept parameter: xi, xi1, xi2, q1_level, ...
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Static hedge weights, portfolios and pathwise evaluation.
    Hedge {
        #[command(flatten)]
        common: Common,
        /// all, basic, none, det, stoch or basicN.
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Terminal P&L of a hedged swap under the three CTD schemes.
    SimulatePnl(Common),
    /// Piecewise-constant theta reproducing the mean curves.
    CalibrateTheta(Common),
    /// Runs the validation suite.
    Acceptance {
        /// all, jensen, moment-oracles, reference-values, acceptance or a case id.
        #[arg(long, default_value = "all")]
        filter: String,
        /// Full-size Monte Carlo budgets instead of the quick ones.
        #[arg(long)]
        full: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Runs the command named in the config file.
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// Config file, or the name of a bundled config (experiment1, swap_pnl, ...).
    #[arg(long, short)]
    config: String,
    /// Override a config key, e.g. `--set model.spreads.0.xi=0.002`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Pricing grid nodes per year.
    #[arg(long)]
    grid: Option<usize>,
    /// Also write SVG charts.
    #[arg(long)]
    svg: bool,
}

impl Common {
    fn overrides(&self, extra: &[(&str, Option<&String>)]) -> Vec<String> {
        let mut v = self.set.clone();
        if let Some(s) = self.seed {
            v.push(format!("seed={s}"));
        }
        if let Some(p) = self.paths {
            v.push(format!("simulation.paths={p}"));
        }
        if let Some(g) = self.grid {
            v.push(format!("horizon.nodes_per_year={g}"));
        }
        for (key, value) in extra {
            if let Some(x) = value {
                v.push(format!("{key}=\"{x}\""));
            }
        }
        v
    }
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(s) = std::env::var("CTD_THREADS") {
        let n: usize = s.parse().with_context(|| format!("CTD_THREADS must be a positive integer, got '{s}'"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn execute(cli: Cli) -> anyhow::Result<bool> {
    let (common, kind, extra): (Common, Option<CommandKind>, Vec<(&str, Option<String>)>) = match cli.command {
        Command::Acceptance { filter, full, out } => {
            let budget = if full { Budget::full() } else { Budget::quick() };
            let report = run_suite(&filter, &budget);
            print!("{}", report.to_text());
            let artifacts = [
                ctd_cli::output::Artifact::new("validation_report.csv", report.to_csv()),
                ctd_cli::output::Artifact::new("validation_report.txt", report.to_text()),
            ];
            write_artifacts(&out, &artifacts).map_err(RunError::from)?;
            return Ok(report.passed());
        }
        Command::Price(c) => (c, Some(CommandKind::Price), vec![]),
        Command::Sensitivity { common, sweep } => (
            common,
            Some(CommandKind::Sensitivity),
            vec![("sensitivity.sweep", sweep)],
        ),
        Command::Hedge { common, strategy } => (common, Some(CommandKind::Hedge), vec![("hedge.strategy", strategy)]),
        Command::SimulatePnl(c) => (c, Some(CommandKind::SimulatePnl), vec![]),
        Command::CalibrateTheta(c) => (c, Some(CommandKind::CalibrateTheta), vec![]),
        Command::Run(c) => (c, None, vec![]),
    };
    let extra: Vec<(&str, Option<&String>)> = extra.iter().map(|(k, v)| (*k, v.as_ref())).collect();
    let cfg = ExperimentConfig::load(&common.config, &common.overrides(&extra)).map_err(RunError::from)?;
    let kind = match kind.or(cfg.command) {
        Some(k) => k,
        None => {
            return Err(RunError::Config(ctd_cli::ConfigError::Invalid {
                key: "command".into(),
                line: None,
                message: "`ctd run` needs a `command` key in the config".into(),
            })
            .into())
        }
    };
    let outcome = run(&cfg, kind, RunOptions { svg: common.svg })?;
    write_artifacts(&common.out, &outcome.artifacts).map_err(RunError::from)?;
    for a in &outcome.artifacts {
        println!("{}", common.out.join(&a.name).display());
    }
    Ok(!outcome.failed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| execute(cli));
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK_FAILED as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<RunError>().map_or(1, RunError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
