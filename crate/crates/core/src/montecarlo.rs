//! Exact-step simulation of the domestic rate and the collateral spreads, and
//! Monte Carlo estimators used as oracles for the analytic pricers.
//!
//! Each step draws the OU displacement and its time integral jointly from
//! their exact Gaussian transition, so `int q_p` carries no discretisation
//! error. The running maximum `int max(0, q_1, ..., q_N)` uses the trapezoid
//! rule on the simulation grid.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{CtdError, Result};
use crate::numerics::{one_minus_exp_over, pairwise_sum};
use crate::spread_model::{integrated_ou_kernel, MarketModel};

/// Simulation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationPlan {
    pub n_paths: usize,
    pub steps_per_year: usize,
    pub start: f64,
    pub horizon: f64,
    pub seed: u64,
    pub antithetic: bool,
    /// Store the state every `record_every` steps; 0 keeps only the endpoints.
    pub record_every: usize,
}

impl SimulationPlan {
    pub fn new(n_paths: usize, steps_per_year: usize, horizon: f64, seed: u64) -> Self {
        Self {
            n_paths,
            steps_per_year,
            start: 0.0,
            horizon,
            seed,
            antithetic: false,
            record_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(CtdError::validation("n_paths must be at least 2"));
        }
        if self.antithetic && self.n_paths % 2 != 0 {
            return Err(CtdError::validation("antithetic sampling needs an even n_paths"));
        }
        if self.steps_per_year == 0 {
            return Err(CtdError::validation("steps_per_year must be at least 1"));
        }
        if !(self.horizon > self.start) {
            return Err(CtdError::validation("horizon must exceed the start time"));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (((self.horizon - self.start) * self.steps_per_year as f64).round() as usize).max(1)
    }
}

/// Simulated levels and running integrals at the recorded times.
///
/// Process 0 is the domestic rate, `1..=N` the spreads.
#[derive(Debug, Clone)]
pub struct PathBundle {
    pub times: Vec<f64>,
    pub n_paths: usize,
    pub n_processes: usize,
    pub antithetic: bool,
    levels: Vec<f64>,
    integrals: Vec<f64>,
    max_integrals: Vec<f64>,
}

impl PathBundle {
    #[inline]
    fn idx(&self, path: usize, k: usize) -> usize {
        path * self.times.len() + k
    }

    /// Level of process `p` on `path` at recorded time index `k`.
    #[inline]
    pub fn level(&self, path: usize, k: usize, p: usize) -> f64 {
        self.levels[self.idx(path, k) * self.n_processes + p]
    }

    /// `int_{start}^{t_k} x_p` along `path`.
    #[inline]
    pub fn integral(&self, path: usize, k: usize, p: usize) -> f64 {
        self.integrals[self.idx(path, k) * self.n_processes + p]
    }

    /// `int_{start}^{t_k} max(0, q_1, ..., q_N)` along `path`.
    #[inline]
    pub fn max_integral(&self, path: usize, k: usize) -> f64 {
        self.max_integrals[self.idx(path, k)]
    }

    /// Index of the recorded time equal to `t`.
    pub fn time_index(&self, t: f64) -> Result<usize> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() < 1e-9)
            .ok_or_else(|| CtdError::Domain {
                t,
                start: self.times[0],
                end: *self.times.last().unwrap(),
            })
    }

    /// Writes one row per path and recorded time.
    ///
    /// Columns: `path,time,r0,q1..qN,int_r0,int_q1..int_qN,int_max`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)
            .map_err(|e| CtdError::validation(format!("cannot create {}: {e}", path.display())))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        let n = self.n_processes - 1;
        let mut header = vec!["path".to_string(), "time".to_string(), "r0".to_string()];
        header.extend((1..=n).map(|i| format!("q{i}")));
        header.push("int_r0".into());
        header.extend((1..=n).map(|i| format!("int_q{i}")));
        header.push("int_max".into());
        let io = |e: csv::Error| CtdError::numerical(format!("path dump failed: {e}"));
        w.write_record(&header).map_err(io)?;
        for p in 0..self.n_paths {
            for (k, t) in self.times.iter().enumerate() {
                let mut row = vec![p.to_string(), format!("{t:.11e}")];
                row.extend((0..=n).map(|q| format!("{:.11e}", self.level(p, k, q))));
                row.extend((0..=n).map(|q| format!("{:.11e}", self.integral(p, k, q))));
                row.push(format!("{:.11e}", self.max_integral(p, k)));
                w.write_record(&row).map_err(io)?;
            }
        }
        w.flush()
            .map_err(|e| CtdError::numerical(format!("path dump failed: {e}")))?;
        Ok(())
    }
}

/// Lower-triangular factor of a positive semidefinite matrix; columns with a
/// vanishing pivot are zero.
fn semidefinite_cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    let scale = (0..n).map(|i| a[i * n + i]).fold(0.0, f64::max);
    let tol = 1e-13 * scale;
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if d < -1e-9 * scale.max(f64::MIN_POSITIVE) {
            return Err(CtdError::numerical(format!(
                "step covariance not positive semidefinite (pivot {d:.3e} at {j}); \
                 clip negative eigenvalues of the correlation matrix"
            )));
        }
        if d <= tol {
            continue;
        }
        let ljj = d.sqrt();
        l[j * n + j] = ljj;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / ljj;
        }
    }
    Ok(l)
}

/// `int_0^dt e^{-a (dt - s)} (1 - e^{-(a+b) s}) / (a + b) ds`.
fn cross_level_integral(a: f64, b: f64, dt: f64) -> f64 {
    let (x, y) = (a * dt, b * dt);
    if x + y < 1e-6 {
        return dt * dt * (0.5 - (2.0 * x + y) / 6.0);
    }
    let ba = dt * one_minus_exp_over(x);
    let bb = dt * one_minus_exp_over(y);
    (ba - (-x).exp() * bb) / (a + b)
}

struct StepModel {
    np: usize,
    decay: Vec<f64>,
    b: Vec<f64>,
    chol: Vec<f64>,
    active: Vec<usize>,
}

impl StepModel {
    fn new(model: &MarketModel, dt: f64) -> Result<Self> {
        let np = model.n_spreads() + 1;
        let dim = 2 * np;
        let mut cov = vec![0.0; dim * dim];
        for p in 0..np {
            for q in 0..np {
                let (sp, sq) = (model.process(p), model.process(q));
                let s = sp.xi() * sq.xi() * model.correlations.get(p, q);
                let (a, b) = (sp.kappa(), sq.kappa());
                // level-level, integral-integral, level-integral blocks
                cov[p * dim + q] = s * dt * one_minus_exp_over((a + b) * dt);
                cov[(np + p) * dim + np + q] = s * integrated_ou_kernel(a, b, dt);
                let li = s * cross_level_integral(a, b, dt);
                cov[p * dim + np + q] = li;
                cov[(np + q) * dim + p] = li;
            }
        }
        let chol = semidefinite_cholesky(&cov, dim)?;
        let active = (0..dim).filter(|&j| chol[j * dim + j] > 0.0).collect();
        Ok(Self {
            np,
            decay: (0..np).map(|p| (-model.process(p).kappa() * dt).exp()).collect(),
            b: (0..np)
                .map(|p| dt * one_minus_exp_over(model.process(p).kappa() * dt))
                .collect(),
            chol,
            active,
        })
    }
}

/// Simulates from the unconditional initial state (all displacements 0).
pub fn simulate(model: &MarketModel, plan: &SimulationPlan) -> Result<PathBundle> {
    let zeros = vec![0.0; model.n_spreads() + 1];
    simulate_from(model, plan, &zeros)
}

/// Simulates from `plan.start` with OU displacements `u_p(start)` given in
/// `initial` (index 0 the domestic rate).
pub fn simulate_from(model: &MarketModel, plan: &SimulationPlan, initial: &[f64]) -> Result<PathBundle> {
    plan.validate()?;
    let np = model.n_spreads() + 1;
    if initial.len() != np {
        return Err(CtdError::validation("initial displacement length differs from process count"));
    }
    model.check_horizon(plan.start, plan.horizon)?;
    let n_steps = plan.n_steps();
    let dt = (plan.horizon - plan.start) / n_steps as f64;
    let step = StepModel::new(model, dt)?;
    let grid: Vec<f64> = (0..=n_steps)
        .map(|k| {
            if k == n_steps {
                plan.horizon
            } else {
                plan.start + k as f64 * dt
            }
        })
        .collect();
    let recorded: Vec<usize> = (0..=n_steps)
        .filter(|&k| {
            k == 0 || k == n_steps || (plan.record_every > 0 && k % plan.record_every == 0)
        })
        .collect();
    let times: Vec<f64> = recorded.iter().map(|&k| grid[k]).collect();
    let means: Vec<Vec<f64>> = grid
        .iter()
        .map(|&t| (0..np).map(|p| model.process(p).mean_curve().at(t)).collect())
        .collect();
    let mean_integrals: Vec<Vec<f64>> = grid
        .windows(2)
        .map(|w| {
            (0..np)
                .map(|p| model.process(p).mean_curve().integral(w[0], w[1]))
                .collect()
        })
        .collect();

    let nt = times.len();
    let mut levels = vec![0.0; plan.n_paths * nt * np];
    let mut integrals = vec![0.0; plan.n_paths * nt * np];
    let mut max_integrals = vec![0.0; plan.n_paths * nt];

    let per_path_levels = nt * np;
    let dim = 2 * np;
    let group = if plan.antithetic { 2 } else { 1 };
    levels
        .par_chunks_mut(per_path_levels * group)
        .zip(integrals.par_chunks_mut(per_path_levels * group))
        .zip(max_integrals.par_chunks_mut(nt * group))
        .enumerate()
        .for_each(|(g, ((lv, iv), mv))| {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            rng.set_stream(g as u64);
            let mut normals = vec![0.0; n_steps * step.active.len()];
            for z in normals.iter_mut() {
                *z = StandardNormal.sample(&mut rng);
            }
            for m in 0..group {
                let sign = if m == 0 { 1.0 } else { -1.0 };
                run_path(
                    &step,
                    &means,
                    &mean_integrals,
                    initial,
                    &normals,
                    sign,
                    dt,
                    &recorded,
                    &mut lv[m * per_path_levels..(m + 1) * per_path_levels],
                    &mut iv[m * per_path_levels..(m + 1) * per_path_levels],
                    &mut mv[m * nt..(m + 1) * nt],
                    dim,
                );
            }
        });

    Ok(PathBundle {
        times,
        n_paths: plan.n_paths,
        n_processes: np,
        antithetic: plan.antithetic,
        levels,
        integrals,
        max_integrals,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_path(
    step: &StepModel,
    means: &[Vec<f64>],
    mean_integrals: &[Vec<f64>],
    initial: &[f64],
    normals: &[f64],
    sign: f64,
    dt: f64,
    recorded: &[usize],
    lv: &mut [f64],
    iv: &mut [f64],
    mv: &mut [f64],
    dim: usize,
) {
    let np = step.np;
    let na = step.active.len();
    let mut u = initial.to_vec();
    let mut int_q = vec![0.0; np];
    let mut int_m = 0.0;
    let mut eps = vec![0.0; dim];
    let level = |u: &[f64], k: usize, p: usize| means[k][p] + u[p];
    let spread_max = |u: &[f64], k: usize| -> f64 {
        (1..np).map(|p| level(u, k, p)).fold(0.0, f64::max)
    };
    let mut m_prev = spread_max(&u, 0);
    let mut rec = 0;
    let mut store = |k: usize, u: &[f64], int_q: &[f64], int_m: f64, rec: &mut usize| {
        if *rec < recorded.len() && recorded[*rec] == k {
            for p in 0..np {
                lv[*rec * np + p] = level(u, k, p);
                iv[*rec * np + p] = int_q[p];
            }
            mv[*rec] = int_m;
            *rec += 1;
        }
    };
    store(0, &u, &int_q, int_m, &mut rec);
    for k in 0..means.len() - 1 {
        let z = &normals[k * na..(k + 1) * na];
        for (i, e) in eps.iter_mut().enumerate() {
            let mut s = 0.0;
            for (c, &j) in step.active.iter().enumerate() {
                if j > i {
                    break;
                }
                s += step.chol[i * dim + j] * z[c];
            }
            *e = sign * s;
        }
        for p in 0..np {
            let j = u[p] * step.b[p] + eps[np + p];
            u[p] = u[p] * step.decay[p] + eps[p];
            int_q[p] += mean_integrals[k][p] + j;
        }
        let m = spread_max(&u, k + 1);
        int_m += 0.5 * dt * (m_prev + m);
        m_prev = m;
        store(k + 1, &u, &int_q, int_m, &mut rec);
    }
}

/// Pathwise functionals understood by [`mc_expectation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Payoff {
    /// `exp(-int (r0 + q_i))`; `Bond(0)` is the domestic bond.
    Bond(usize),
    /// `Bond(i)` squared.
    BondSquared(usize),
    /// `Bond(i) * Bond(j)`.
    JointBond(usize, usize),
    /// `exp(-int q_i)` without domestic discounting.
    SpreadBond(usize),
    /// `exp(-int max(q_i, q_1 + q_i, ..., q_N + q_i))`.
    ShiftedMax(usize),
    /// `exp(-int (r0 + max(0, q_1, ..., q_N)))`.
    CollateralBond,
    /// `exp(-int max(0, q_1, ..., q_N))`.
    Ctd,
}

impl Payoff {
    /// Parses names such as `bond(1)`, `joint_bond(1,2)` or `ctd`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim().replace(' ', "");
        let (name, args) = match s.find('(') {
            Some(i) if s.ends_with(')') => (&s[..i], &s[i + 1..s.len() - 1]),
            _ => (s.as_str(), ""),
        };
        let nums: Vec<usize> = if args.is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|a| a.parse().map_err(|_| CtdError::validation(format!("bad payoff argument '{a}'"))))
                .collect::<Result<_>>()?
        };
        let one = || {
            nums.first()
                .copied()
                .filter(|_| nums.len() == 1)
                .ok_or_else(|| CtdError::validation(format!("payoff '{s}' takes one index")))
        };
        match name {
            "bond" => Ok(Payoff::Bond(one()?)),
            "bond_squared" => Ok(Payoff::BondSquared(one()?)),
            "spread_bond" => Ok(Payoff::SpreadBond(one()?)),
            "shifted_max" => Ok(Payoff::ShiftedMax(one()?)),
            "joint_bond" if nums.len() == 2 => Ok(Payoff::JointBond(nums[0], nums[1])),
            "collateral_bond_pc" => Ok(Payoff::CollateralBond),
            "ctd" => Ok(Payoff::Ctd),
            _ => Err(CtdError::validation(format!("unknown payoff '{s}'"))),
        }
    }

    fn check(&self, n_processes: usize) -> Result<()> {
        let bad = |i: usize| i >= n_processes;
        let invalid = match *self {
            Payoff::Bond(i) | Payoff::BondSquared(i) => bad(i),
            Payoff::SpreadBond(i) | Payoff::ShiftedMax(i) => i == 0 || bad(i),
            Payoff::JointBond(i, j) => bad(i) || bad(j),
            Payoff::CollateralBond | Payoff::Ctd => false,
        };
        if invalid {
            return Err(CtdError::validation(format!("payoff {self:?} references a missing process")));
        }
        Ok(())
    }

    fn eval(&self, b: &PathBundle, path: usize, k0: usize, k1: usize) -> f64 {
        let int = |p: usize| b.integral(path, k1, p) - b.integral(path, k0, p);
        let max = || b.max_integral(path, k1) - b.max_integral(path, k0);
        let bond = |i: usize| {
            if i == 0 {
                (-int(0)).exp()
            } else {
                (-int(0) - int(i)).exp()
            }
        };
        match *self {
            Payoff::Bond(i) => bond(i),
            Payoff::BondSquared(i) => bond(i).powi(2),
            Payoff::JointBond(i, j) => bond(i) * bond(j),
            Payoff::SpreadBond(i) => (-int(i)).exp(),
            Payoff::ShiftedMax(i) => (-max() - int(i)).exp(),
            Payoff::CollateralBond => (-int(0) - max()).exp(),
            Payoff::Ctd => (-max()).exp(),
        }
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

impl McEstimate {
    /// Whether `value` lies within `k` standard errors.
    pub fn contains(&self, value: f64, k: f64) -> bool {
        (value - self.mean).abs() <= k * self.stderr
    }
}

/// Pathwise payoff samples over `[t0, t_end]`.
pub fn payoff_samples(bundle: &PathBundle, payoff: Payoff, t0: f64, t_end: f64) -> Result<Vec<f64>> {
    payoff.check(bundle.n_processes)?;
    let k0 = bundle.time_index(t0)?;
    let k1 = bundle.time_index(t_end)?;
    Ok((0..bundle.n_paths)
        .into_par_iter()
        .map(|p| payoff.eval(bundle, p, k0, k1))
        .collect())
}

/// Mean and standard error; antithetic pairs are averaged first.
pub fn estimate(samples: &[f64], antithetic: bool) -> McEstimate {
    let units: Vec<f64> = if antithetic {
        samples.chunks(2).map(|c| 0.5 * (c[0] + c[1])).collect()
    } else {
        samples.to_vec()
    };
    let n = units.len();
    let mean = pairwise_sum(&units) / n as f64;
    if n < 2 || units.iter().all(|&x| x == units[0]) {
        return McEstimate {
            mean: if n > 0 && units.iter().all(|&x| x == units[0]) { units[0] } else { mean },
            stderr: 0.0,
        };
    }
    let sq: Vec<f64> = units.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n as f64 - 1.0);
    McEstimate {
        mean,
        stderr: (var / n as f64).sqrt(),
    }
}

pub fn mc_expectation(bundle: &PathBundle, payoff: Payoff, t0: f64, t_end: f64) -> Result<McEstimate> {
    Ok(estimate(&payoff_samples(bundle, payoff, t0, t_end)?, bundle.antithetic))
}

/// Monte Carlo CTD factor `E[exp(-int max(0, q_1, ..., q_N))]`.
pub fn mc_ctd(bundle: &PathBundle, t0: f64, t_end: f64) -> Result<McEstimate> {
    mc_expectation(bundle, Payoff::Ctd, t0, t_end)
}

/// Sample covariance of two sample vectors with a standard error from the
/// spread of centred products (pair-averaged under antithetic sampling).
pub fn covariance_estimate(x: &[f64], y: &[f64], antithetic: bool) -> McEstimate {
    let n = x.len();
    let mx = pairwise_sum(x) / n as f64;
    let my = pairwise_sum(y) / n as f64;
    let prod: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    let cov = pairwise_sum(&prod) / (n as f64 - 1.0);
    let se = estimate(&prod, antithetic).stderr;
    McEstimate { mean: cov, stderr: se }
}

pub fn mc_covariance(bundle: &PathBundle, a: Payoff, b: Payoff, t0: f64, t_end: f64) -> Result<McEstimate> {
    let x = payoff_samples(bundle, a, t0, t_end)?;
    let y = payoff_samples(bundle, b, t0, t_end)?;
    Ok(covariance_estimate(&x, &y, bundle.antithetic))
}

/// Writes the bundle as CSV, creating parent directories.
pub fn dump_paths(bundle: &PathBundle, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)
            .map_err(|e| CtdError::validation(format!("cannot create {}: {e}", dir.display())))?;
    }
    bundle.write_csv(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::SpreadCurve;
    use crate::spread_model::{CorrelationMatrix, HullWhiteSpec};

    fn model(xi1: f64, xi2: f64, rho: f64) -> MarketModel {
        let c = |v: f64| SpreadCurve::constant(0.0, 10.0, v).unwrap();
        MarketModel::new(
            HullWhiteSpec::new(0.1, 0.0, c(0.0)).unwrap(),
            vec![
                HullWhiteSpec::new(0.0078, xi1, c(0.014)).unwrap(),
                HullWhiteSpec::new(0.0076, xi2, c(0.0133)).unwrap(),
            ],
            CorrelationMatrix::two_spreads(rho).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn semidefinite_factor_reproduces_matrix() {
        let a = [4.0, 2.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 9.0];
        let l = semidefinite_cholesky(&a, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| l[i * 3 + k] * l[j * 3 + k]).sum();
                assert!((s - a[i * 3 + j]).abs() < 1e-12);
            }
        }
        assert!(semidefinite_cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_err());
    }

    #[test]
    fn step_kernels_match_quadrature() {
        let rule = crate::numerics::legendre(40);
        for (a, b, dt) in [(0.0078, 0.0076, 0.1), (0.5, 2.0, 0.7), (1e-8, 1e-8, 0.01)] {
            let li = rule.integrate(0.0, dt, |s| {
                (-a * (dt - s)).exp() * dt.min(s) * one_minus_exp_over((a + b) * s)
            });
            assert!((cross_level_integral(a, b, dt) - li).abs() < 1e-12 * dt * dt);
        }
    }

    #[test]
    fn zero_volatility_paths_follow_means() {
        let m = model(0.0, 0.0, 0.3);
        let plan = SimulationPlan::new(4, 10, 10.0, 7);
        let b = simulate(&m, &plan).unwrap();
        for p in 0..4 {
            for k in 0..b.times.len() {
                assert_eq!(b.level(p, k, 1), 0.014);
            }
        }
        let e = mc_ctd(&b, 0.0, 10.0).unwrap();
        assert_eq!(e.stderr, 0.0);
        assert!((e.mean - (-0.14f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let m = model(0.0018, 0.0023, 0.3);
        let mut plan = SimulationPlan::new(64, 12, 10.0, 42);
        plan.antithetic = true;
        let a = mc_ctd(&simulate(&m, &plan).unwrap(), 0.0, 10.0).unwrap();
        let b = mc_ctd(&simulate(&m, &plan).unwrap(), 0.0, 10.0).unwrap();
        assert_eq!(a, b);
        plan.seed = 43;
        let c = mc_ctd(&simulate(&m, &plan).unwrap(), 0.0, 10.0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn payoff_names_parse() {
        assert_eq!(Payoff::parse("bond(2)").unwrap(), Payoff::Bond(2));
        assert_eq!(Payoff::parse("joint_bond(1, 2)").unwrap(), Payoff::JointBond(1, 2));
        assert_eq!(Payoff::parse("collateral_bond_pc").unwrap(), Payoff::CollateralBond);
        assert!(Payoff::parse("bond").is_err());
        assert!(Payoff::parse("swap(1)").is_err());
    }
}
