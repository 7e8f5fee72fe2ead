//! Parallel ensemble runner and the estimators behind every quantitative
//! check. Each experiment returns a [`Report`]: point estimates with standard
//! errors, pass/fail checks, the frozen tolerances it used and plot series.
//!
//! Per-path work runs on a rayon pool; results are collected in trajectory
//! order and every reduction walks that order, so summaries do not depend on
//! the number of workers.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::io::{self, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{PhaseState, Potential};
use crate::observe::{
    excursions, r2_path, rotation_schedule, ObserveError, Path, ScalingParams, FULL_TURN,
};
use crate::oracle::{
    bm_exit_time, bm_hitting_laplace, bm_lower_exit_probability, bm_two_sided_exit_probability,
    doob_bound, exit_ode_du, exit_ode_residual, exit_ode_u, half_normal_cdf, ou_moments,
    sample_bm_hitting_time, sample_reflected_bm,
};
use crate::sde::{
    mix64, simulate, simulate_analogue, steps_for, AnalogueState, Integrator, NoiseStream, SimError,
    Stepper, Trajectory, GAUSSIAN_METHOD,
};
use crate::stats::{bootstrap_se, ks_statistic, mean, ols_slope, wls_slope, Estimate};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PathError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Observe(#[from] ObserveError),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VerifyError {
    #[error("trajectory {index} of master seed {seed} failed: {source}")]
    Path {
        seed: u64,
        index: u64,
        #[source]
        source: PathError,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

/// Master seed and worker cap for one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Exec {
    pub seed: u64,
    pub workers: Option<usize>,
}

impl Exec {
    pub fn new(seed: u64) -> Self {
        Self { seed, workers: None }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = Some(workers);
        self
    }

    /// Independent master seed for a secondary ensemble of the same experiment.
    pub fn sub(&self, salt: u64) -> Self {
        Self {
            seed: mix64(self.seed ^ mix64(salt.wrapping_add(0x5ab))),
            workers: self.workers,
        }
    }
}

/// Runs `f` once per trajectory index `0..n_paths`, each with its own
/// [`NoiseStream`], and returns the results in index order. The first failing
/// index (in index order) is reported.
pub fn run_ensemble<T, F>(exec: &Exec, n_paths: usize, f: F) -> Result<Vec<T>, VerifyError>
where
    T: Send,
    F: Fn(u64, &mut NoiseStream) -> Result<T, PathError> + Sync + Send,
{
    let seed = exec.seed;
    let job = || {
        (0..n_paths as u64)
            .into_par_iter()
            .map(|i| {
                let mut noise = NoiseStream::new(seed, i);
                f(i, &mut noise)
            })
            .collect::<Vec<_>>()
    };
    let results = match exec.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| VerifyError::Pool(e.to_string()))?
            .install(job),
        None => job(),
    };
    results
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.map_err(|source| VerifyError::Path { seed, index: i as u64, source }))
        .collect()
}

/// A bound or window comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, upper: f64) -> Self {
        Self { name: name.into(), value, lower: None, upper: Some(upper), passed: value <= upper }
    }

    pub fn within(name: impl Into<String>, value: f64, lower: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            value,
            lower: Some(lower),
            upper: Some(upper),
            passed: lower <= value && value <= upper,
        }
    }

    /// `|value - target| <= tol`
    pub fn near(name: impl Into<String>, value: f64, target: f64, tol: f64) -> Self {
        Self::within(name, value, target - tol, target + tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub name: String,
    /// `(x, y, y_err)`
    pub rows: Vec<(f64, f64, f64)>,
}

/// Output of one experiment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub experiment: String,
    pub n_paths: usize,
    pub dt: f64,
    pub integrator: Integrator,
    pub potential: Potential,
    pub stats: Vec<Estimate>,
    pub checks: Vec<Check>,
    pub constants: BTreeMap<String, f64>,
    pub plot: Vec<PlotSeries>,
    pub sample_path: Option<Trajectory>,
}

impl Report {
    fn new(experiment: &str, potential: Potential, integrator: Integrator, dt: f64, n_paths: usize) -> Self {
        Self {
            experiment: experiment.to_string(),
            n_paths,
            dt,
            integrator,
            potential,
            ..Default::default()
        }
    }

    fn stat(&mut self, e: Estimate) -> Estimate {
        self.stats.push(e.clone());
        e
    }

    fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    fn constant(&mut self, key: &str, value: f64) {
        self.constants.insert(key.to_string(), value);
    }

    fn series(&mut self, name: &str, rows: Vec<(f64, f64, f64)>) {
        self.plot.push(PlotSeries { name: name.to_string(), rows });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn find_check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn find_stat(&self, name: &str) -> Option<&Estimate> {
        self.stats.iter().find(|s| s.name == name)
    }

    /// Appends everything from `other`, keeping this report's header.
    pub fn merge(&mut self, other: Report) {
        self.stats.extend(other.stats);
        self.checks.extend(other.checks);
        self.constants.extend(other.constants);
        self.plot.extend(other.plot);
        if self.sample_path.is_none() {
            self.sample_path = other.sample_path;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryMetadata {
    pub dt: f64,
    pub integrator: String,
    pub gaussian_method: String,
    pub potential: String,
    /// Frozen tolerances and constants the checks used.
    pub constants: BTreeMap<String, f64>,
}

/// Serializable result of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub experiment: String,
    pub n_paths: usize,
    pub master_seed: u64,
    pub config_digest: String,
    pub passed: bool,
    pub stats: Vec<Estimate>,
    pub checks: Vec<Check>,
    pub metadata: SummaryMetadata,
}

impl EnsembleSummary {
    pub fn from_report(report: &Report, master_seed: u64, config_digest: &str) -> Self {
        Self {
            experiment: report.experiment.clone(),
            n_paths: report.n_paths,
            master_seed,
            config_digest: config_digest.to_string(),
            passed: report.passed(),
            stats: report.stats.clone(),
            checks: report.checks.clone(),
            metadata: SummaryMetadata {
                dt: report.dt,
                integrator: report.integrator.name().to_string(),
                gaussian_method: GAUSSIAN_METHOD.to_string(),
                potential: report.potential.name().to_string(),
                constants: report.constants.clone(),
            },
        }
    }
}

/// TSV with columns `x, y, y_err`; one block per series, headed by comments.
pub fn write_plot_tsv<W: Write>(mut out: W, config_digest: &str, plot: &[PlotSeries]) -> io::Result<()> {
    writeln!(out, "# config_digest={config_digest}")?;
    for (i, s) in plot.iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
            writeln!(out)?;
        }
        writeln!(out, "# series={}", s.name)?;
        writeln!(out, "x\ty\ty_err")?;
        for (x, y, e) in &s.rows {
            writeln!(out, "{x:.16e}\t{y:.16e}\t{e:.16e}")?;
        }
    }
    Ok(())
}

fn invalid(msg: impl Into<String>) -> VerifyError {
    VerifyError::Invalid(msg.into())
}

fn require_positive(pairs: &[(&str, f64)]) -> Result<(), VerifyError> {
    for (name, v) in pairs {
        if !(v.is_finite() && *v > 0.0) {
            return Err(invalid(format!("{name} must be finite and positive (got {v})")));
        }
    }
    Ok(())
}

fn require_paths(n: usize) -> Result<(), VerifyError> {
    if n < 2 {
        return Err(invalid(format!("need at least 2 paths for standard errors (got {n})")));
    }
    Ok(())
}

fn uniform_angle(noise: &mut NoiseStream) -> f64 {
    noise.aux().random::<f64>() * TAU
}

fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

fn indicator_mean(name: &str, flags: &[bool]) -> Estimate {
    let xs: Vec<f64> = flags.iter().map(|b| f64::from(u8::from(*b))).collect();
    Estimate::of_mean(name, &xs)
}

fn format_level(x: f64) -> String {
    let s = format!("{x}");
    s.replace('.', "p")
}

// ---------------------------------------------------------------------------
// Diffusive limit and the martingale-problem defect

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitParams {
    pub potential: Potential,
    pub integrator: Integrator,
    pub big_t: f64,
    pub dt: f64,
    pub n_paths: usize,
}

impl Default for LimitParams {
    fn default() -> Self {
        Self { potential: Potential::Cos, integrator: Integrator::Split, big_t: 2048.0, dt: 0.01, n_paths: 4096 }
    }
}

/// Scaled paths `X_t = r1(tT)/√T` on `t ∈ [0, 1]`, all on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitEnsemble {
    pub times: Vec<f64>,
    pub x: Vec<Vec<f64>>,
}

impl LimitEnsemble {
    fn half_index(&self) -> usize {
        (self.times.len() - 1) / 2
    }
}

/// Grid with an even number of cells, each at most `1e-3` in diffusive time,
/// with cells made of whole integration steps.
fn diffusive_grid(big_t: f64, dt: f64) -> Result<(u64, u64), VerifyError> {
    let steps = big_t / dt;
    let n = steps.round();
    if (steps - n).abs() > 1e-9 * steps.max(1.0) || n < 1000.0 {
        return Err(invalid(format!("T/dt must be an integer of at least 1000 (got {steps})")));
    }
    let n = n as u64;
    (1..=n / 1000)
        .rev()
        .find(|d| n % d == 0 && (n / d) % 2 == 0)
        .map(|d| (n, d))
        .ok_or_else(|| invalid(format!("T/dt = {n} admits no even recording grid of at least 1000 cells")))
}

pub fn limit_ensemble(p: &LimitParams, exec: &Exec) -> Result<LimitEnsemble, VerifyError> {
    require_positive(&[("T", p.big_t), ("dt", p.dt)])?;
    require_paths(p.n_paths)?;
    let (n, stride) = diffusive_grid(p.big_t, p.dt)?;
    let cells = n / stride;
    let root = p.big_t.sqrt();
    let x = run_ensemble(exec, p.n_paths, |_, noise| {
        let mut st = Stepper::new(PhaseState::origin(), p.potential, p.dt, p.integrator)?;
        let mut xs = Vec::with_capacity(cells as usize + 1);
        xs.push(0.0);
        for k in 1..=n {
            st.advance(noise)?;
            if k % stride == 0 {
                xs.push(st.state().r1 / root);
            }
        }
        Ok(xs)
    })?;
    let times = (0..=cells).map(|i| i as f64 / cells as f64).collect();
    Ok(LimitEnsemble { times, x })
}

/// KS distances at `t = 1/2` and `t = 1` and the increment second moment.
pub fn limit_report(p: &LimitParams, ens: &LimitEnsemble) -> Report {
    let mut rep = Report::new("limit", p.potential, p.integrator, p.dt, ens.x.len());
    let ks_tol = 0.05;
    let rel = 0.05;
    rep.constant("ks_tolerance", ks_tol);
    rep.constant("increment_relative_tolerance", rel);
    rep.constant("T", p.big_t);
    let half = ens.half_index();
    let last = ens.times.len() - 1;
    let at = |i: usize| -> Vec<f64> { ens.x.iter().map(|x| x[i].abs()).collect() };
    let (x_half, x_one) = (at(half), at(last));
    let ks1 = ks_statistic(&x_one, |v| half_normal_cdf(v, 1.0));
    let ks_half = ks_statistic(&x_half, |v| half_normal_cdf(v, 0.5));
    let n = ens.x.len();
    rep.stat(Estimate::new("ks_statistic", ks1, 0.0, n));
    rep.stat(Estimate::new("ks_statistic_half", ks_half, 0.0, n));
    rep.check(Check::at_most("ks_statistic", ks1, ks_tol));
    rep.check(Check::at_most("ks_statistic_half", ks_half, ks_tol));

    let incr: Vec<f64> = ens.x.iter().map(|x| (x[last] - x[half]).powi(2)).collect();
    let e = rep.stat(Estimate::of_mean("increment_second_moment", &incr));
    let tol = (4.0 * e.se).max(rel * 0.5);
    rep.check(Check::near("increment_second_moment", e.estimate, 0.5, tol));

    let m2: Vec<f64> = x_one.iter().map(|v| v * v).collect();
    rep.stat(Estimate::of_mean("second_moment_t1", &m2));

    let mut sorted = x_one.clone();
    sorted.sort_by(f64::total_cmp);
    let rows: Vec<(f64, f64, f64)> = (1..=60)
        .map(|j| {
            let x = 3.0 * j as f64 / 60.0;
            let f = sorted.partition_point(|v| *v <= x) as f64 / n as f64;
            (x, f, (f * (1.0 - f) / n as f64).sqrt())
        })
        .collect();
    rep.series("empirical_cdf_t1", rows);
    rep.series(
        "half_normal_cdf_t1",
        (1..=60).map(|j| {
            let x = 3.0 * j as f64 / 60.0;
            (x, half_normal_cdf(x, 1.0), 0.0)
        }).collect(),
    );
    rep
}

pub fn limit_experiment(p: &LimitParams, exec: &Exec) -> Result<Report, VerifyError> {
    let ens = limit_ensemble(p, exec)?;
    Ok(limit_report(p, &ens))
}

/// Test function with closed-form derivatives up to order three.
#[derive(Debug, Clone, Copy)]
pub struct TestFunction {
    pub name: &'static str,
    pub f: fn(f64) -> f64,
    pub d1: fn(f64) -> f64,
    pub d2: fn(f64) -> f64,
    pub d3: fn(f64) -> f64,
}

impl PartialEq for TestFunction {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

impl TestFunction {
    /// `e^{-x²}`
    pub const GAUSSIAN: TestFunction = TestFunction {
        name: "gaussian",
        f: |x| (-x * x).exp(),
        d1: |x| -2.0 * x * (-x * x).exp(),
        d2: |x| (4.0 * x * x - 2.0) * (-x * x).exp(),
        d3: |x| (12.0 * x - 8.0 * x * x * x) * (-x * x).exp(),
    };

    /// `1/(1 + x²)`
    pub const CAUCHY: TestFunction = TestFunction {
        name: "cauchy",
        f: |x| 1.0 / (1.0 + x * x),
        d1: |x| -2.0 * x / (1.0 + x * x).powi(2),
        d2: |x| (6.0 * x * x - 2.0) / (1.0 + x * x).powi(3),
        d3: |x| 24.0 * x * (1.0 - x * x) / (1.0 + x * x).powi(4),
    };

    pub const ONE: TestFunction = TestFunction { name: "one", f: |_| 1.0, d1: |_| 0.0, d2: |_| 0.0, d3: |_| 0.0 };
}

/// Test function, horizon (diffusive units), optional stopping level and
/// time scale for the statistic `f(|X_t|) - f(|X_0|) - ½∫ f''(|X_s|) ds`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleTestSpec {
    pub f: TestFunction,
    pub t: f64,
    /// Stop at the first time `|X| <= epsilon`.
    pub epsilon: Option<f64>,
    pub big_t: f64,
}

impl MartingaleTestSpec {
    pub fn new(f: TestFunction, big_t: f64) -> Self {
        Self { f, t: 1.0, epsilon: None, big_t }
    }

    pub fn validate(&self) -> Result<(), VerifyError> {
        require_positive(&[("t", self.t), ("T", self.big_t)])?;
        if let Some(e) = self.epsilon {
            require_positive(&[("epsilon", e)])?;
        }
        let h = 1e-7;
        let slope = ((self.f.f)(h) - (self.f.f)(0.0)) / h;
        if slope.abs() > 1e-6 {
            return Err(invalid(format!("test function {} needs f'(0+) = 0 (forward difference {slope})", self.f.name)));
        }
        for i in 0..=2000 {
            let x = 20.0 * i as f64 / 2000.0;
            let vals = [(self.f.f)(x), (self.f.d1)(x), (self.f.d2)(x), (self.f.d3)(x)];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("test function {} is not bounded on [0, 20]", self.f.name)));
            }
        }
        Ok(())
    }
}

/// Defect of one path on `times` (diffusive units), with a trapezoidal time
/// integral.
pub fn martingale_defect_path(spec: &MartingaleTestSpec, times: &[f64], x: &[f64]) -> f64 {
    let f = spec.f;
    let stop_t = spec.t * (1.0 + 1e-12);
    let mut end = 0;
    for i in 0..times.len() {
        if times[i] > stop_t {
            break;
        }
        end = i;
        if spec.epsilon.is_some_and(|e| x[i].abs() <= e) {
            break;
        }
    }
    let mut integral = 0.0;
    for i in 1..=end {
        let h = times[i] - times[i - 1];
        integral += 0.5 * h * ((f.d2)(x[i - 1].abs()) + (f.d2)(x[i].abs()));
    }
    (f.f)(x[end].abs()) - (f.f)(x[0].abs()) - 0.5 * integral
}

pub fn martingale_defect(spec: &MartingaleTestSpec, times: &[f64], paths: &[Vec<f64>]) -> Result<Estimate, VerifyError> {
    spec.validate()?;
    if let Some(w) = times.windows(2).map(|w| w[1] - w[0]).find(|h| *h > 1e-3 * (1.0 + 1e-9)) {
        return Err(invalid(format!("diffusive grid spacing {w} exceeds 1e-3")));
    }
    let d: Vec<f64> = paths.iter().map(|x| martingale_defect_path(spec, times, x)).collect();
    Ok(Estimate::of_mean(format!("defect_{}", spec.f.name), &d))
}

const ORACLE_SALT: u64 = 0x0bac1e;

pub fn martingale_report(p: &LimitParams, ens: &LimitEnsemble, exec: &Exec) -> Result<Report, VerifyError> {
    let mut rep = Report::new("martingale", p.potential, p.integrator, p.dt, ens.x.len());
    let (sys_tol, oracle_tol) = (0.02, 0.01);
    rep.constant("system_tolerance", sys_tol);
    rep.constant("oracle_tolerance", oracle_tol);
    rep.constant("T", p.big_t);
    let times = ens.times.clone();
    let bm = run_ensemble(&exec.sub(ORACLE_SALT), ens.x.len(), |_, noise| Ok(sample_reflected_bm(&times, noise)))?;
    for f in [TestFunction::GAUSSIAN, TestFunction::CAUCHY] {
        let spec = MartingaleTestSpec::new(f, p.big_t);
        let mut e = martingale_defect(&spec, &ens.times, &ens.x)?;
        e.name = format!("defect_{}", f.name);
        let e = rep.stat(e);
        rep.check(Check::at_most(format!("defect_{}", f.name), e.estimate.abs(), 4.0 * e.se + sys_tol));

        let mut o = martingale_defect(&spec, &ens.times, &bm)?;
        o.name = format!("oracle_defect_{}", f.name);
        let o = rep.stat(o);
        rep.check(Check::at_most(format!("oracle_defect_{}", f.name), o.estimate.abs(), 4.0 * o.se + oracle_tol));

        let rows = [0.125, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|t| {
                let s = MartingaleTestSpec { t: *t, ..spec };
                let d: Vec<f64> = ens.x.iter().map(|x| martingale_defect_path(&s, &ens.times, x)).collect();
                let e = Estimate::of_mean("", &d);
                (*t, e.estimate, e.se)
            })
            .collect();
        rep.series(&format!("defect_{}_vs_t", f.name), rows);
    }
    Ok(rep)
}

pub fn martingale_experiment(p: &LimitParams, exec: &Exec) -> Result<Report, VerifyError> {
    let ens = limit_ensemble(p, exec)?;
    martingale_report(p, &ens, exec)
}

// ---------------------------------------------------------------------------
// Decoupled weld and a recorded sample path

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulateParams {
    pub potential: Potential,
    pub integrator: Integrator,
    /// `r1(0)` of the recorded path.
    pub r1_0: f64,
    pub horizon: f64,
    pub dt: f64,
    pub stride: usize,
    /// Paths in the decoupled ensemble.
    pub n_paths: usize,
    pub r2_0: f64,
}

impl Default for SimulateParams {
    fn default() -> Self {
        Self {
            potential: Potential::Cos,
            integrator: Integrator::Split,
            r1_0: 8.0,
            horizon: 100.0,
            dt: 0.01,
            stride: 10,
            n_paths: 10_000,
            r2_0: 1.5,
        }
    }
}

/// Records one path of the configured system, then checks the `V ≡ 0`
/// ensemble against the Ornstein–Uhlenbeck law.
pub fn simulate_experiment(p: &SimulateParams, exec: &Exec) -> Result<Report, VerifyError> {
    require_positive(&[("horizon", p.horizon), ("dt", p.dt)])?;
    require_paths(p.n_paths)?;
    let mut rep = Report::new("simulate", p.potential, p.integrator, p.dt, p.n_paths);
    let init = PhaseState::new(p.r1_0, 0.0, 0.0, 0.0);
    let traj = simulate(init, p.potential, p.horizon, p.dt, &mut NoiseStream::new(exec.seed, 0), p.stride, p.integrator)
        .map_err(|source| VerifyError::Path { seed: exec.seed, index: 0, source: source.into() })?;
    let defect = traj.decomposition_defect();
    rep.stat(Estimate::new("sample_path_decomposition_defect", defect, 0.0, 1));
    rep.check(Check::at_most("sample_path_decomposition_defect", defect, 1e-9));
    rep.series(
        "sample_path_r1",
        traj.times.iter().zip(&traj.states).map(|(t, s)| (*t, s.r1, 0.0)).collect(),
    );

    let times = [0.5, 1.0, 3.0];
    let steps: Vec<u64> = times.iter().map(|t| steps_for(*t, p.dt)).collect();
    let weld = exec.sub(1);
    let out = run_ensemble(&weld, p.n_paths, |_, noise| {
        let mut st = Stepper::new(PhaseState::new(0.0, p.r2_0, 0.0, 0.0), Potential::Zero, p.dt, p.integrator)?;
        let mut r2 = Vec::with_capacity(times.len());
        let mut z_nonzero = false;
        for &n in &steps {
            while st.steps() < n {
                st.advance(noise)?;
                z_nonzero |= st.z() != 0.0;
            }
            r2.push(st.state().r2);
        }
        Ok((r2, z_nonzero))
    })?;
    let mut rows = Vec::new();
    for (j, t) in times.iter().enumerate() {
        let xs: Vec<f64> = out.iter().map(|(r, _)| r[j]).collect();
        let (m, v) = ou_moments(p.r2_0, *t);
        let em = rep.stat(Estimate::of_mean(format!("ou_mean_t{}", format_level(*t)), &xs));
        let ev = rep.stat(Estimate::of_variance(format!("ou_variance_t{}", format_level(*t)), &xs));
        rep.check(Check::near(format!("ou_mean_t{}", format_level(*t)), em.estimate, m, 4.0 * em.se));
        rep.check(Check::near(format!("ou_variance_t{}", format_level(*t)), ev.estimate, v, 4.0 * ev.se));
        rows.push((*t, em.estimate, em.se));
    }
    rep.series("ou_mean", rows);
    let nonzero = out.iter().filter(|(_, z)| *z).count();
    rep.stat(Estimate::new("decoupled_z_nonzero_paths", nonzero as f64, 0.0, p.n_paths));
    rep.check(Check::at_most("decoupled_z_identically_zero", nonzero as f64, 0.0));

    let stationary = exec.sub(2);
    let n1 = steps_for(1.0, p.dt);
    let sq = run_ensemble(&stationary, p.n_paths, |_, noise| {
        let a = AnalogueState::stationary(noise.aux());
        let mut st = Stepper::new(PhaseState::new(0.0, a.r, 0.0, a.theta), Potential::Zero, p.dt, p.integrator)?;
        for _ in 0..n1 {
            st.advance(noise)?;
        }
        Ok(st.state().r2.powi(2))
    })?;
    let e = rep.stat(Estimate::of_mean("stationary_r2_second_moment_t1", &sq));
    rep.check(Check::near("stationary_r2_second_moment_t1", e.estimate, 0.5, 4.0 * e.se));
    rep.sample_path = Some(traj);
    Ok(rep)
}

// ---------------------------------------------------------------------------
// One-rotation expansion

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionParams {
    pub potential: Potential,
    pub integrator: Integrator,
    pub levels: Vec<f64>,
    pub n_paths: usize,
    /// Integration steps per rotation; ignored when `dt` is set.
    pub steps_per_rotation: u64,
    pub dt: Option<f64>,
    pub r2_0: f64,
    pub crude_r2_0: f64,
}

impl Default for ExpansionParams {
    fn default() -> Self {
        Self {
            potential: Potential::Cos,
            integrator: Integrator::Split,
            levels: vec![8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0],
            n_paths: 100_000,
            steps_per_rotation: 200,
            dt: None,
            r2_0: 0.0,
            crude_r2_0: 1.0,
        }
    }
}

/// `Z(σ)` after one rotation `σ = 2π/R` from `r1(0) = R`, and the residual
/// `Z(σ) - σ r2(0) V'(θ1(0) - θ2(0)) / r1(0)` of the refined expansion.
pub fn expansion_samples(
    p: &ExpansionParams,
    level: f64,
    r2_0: f64,
    exec: &Exec,
) -> Result<Vec<(f64, f64)>, VerifyError> {
    if level < 2.0 {
        return Err(invalid(format!("expansion needs |r1(0)| >= 2 (got {level})")));
    }
    let sigma = FULL_TURN / level;
    let n = match p.dt {
        Some(dt) => {
            if dt > sigma / 100.0 {
                return Err(invalid(format!("dt = {dt} too coarse at R = {level}: need at most sigma/100 = {}", sigma / 100.0)));
            }
            (sigma / dt).round() as u64
        }
        None => p.steps_per_rotation.max(100),
    };
    let dt = sigma / n as f64;
    run_ensemble(exec, p.n_paths, |_, noise| {
        let theta1 = uniform_angle(noise);
        let init = PhaseState::new(level, r2_0, theta1, 0.0);
        let mut st = Stepper::new(init, p.potential, dt, p.integrator)?;
        for _ in 0..n {
            st.advance(noise)?;
        }
        let z = st.z();
        let lead = sigma * r2_0 * p.potential.d1(init.phase_gap()) / level;
        Ok((z - lead, z))
    })
}

pub fn expansion_experiment(p: &ExpansionParams, exec: &Exec) -> Result<Report, VerifyError> {
    require_paths(p.n_paths)?;
    if p.levels.len() < 2 {
        return Err(invalid("expansion needs at least two levels"));
    }
    let dt_report = p.dt.unwrap_or(FULL_TURN / p.levels[0] / p.steps_per_rotation as f64);
    let mut rep = Report::new("expansion", p.potential, p.integrator, dt_report, p.n_paths);
    let (fine_window, crude_window) = ((2.2, 2.8), (1.8, 2.3));
    rep.constant("refined_slope_low", fine_window.0);
    rep.constant("refined_slope_high", fine_window.1);
    rep.constant("crude_slope_low", crude_window.0);
    rep.constant("crude_slope_high", crude_window.1);
    rep.constant("steps_per_rotation", p.steps_per_rotation as f64);
    rep.constant("r2_0_refined", p.r2_0);
    rep.constant("r2_0_crude", p.crude_r2_0);

    let l2 = |xs: &[f64]| mean(&xs.iter().map(|x| x * x).collect::<Vec<_>>()).sqrt();
    let mut fine = Vec::new();
    let mut crude = Vec::new();
    for (i, &r) in p.levels.iter().enumerate() {
        let sigma = FULL_TURN / r;
        let a = expansion_samples(p, r, p.r2_0, &exec.sub(2 * i as u64))?;
        let res: Vec<f64> = a.iter().map(|(res, _)| *res).collect();
        let b = expansion_samples(p, r, p.crude_r2_0, &exec.sub(2 * i as u64 + 1))?;
        let zs: Vec<f64> = b.iter().map(|(_, z)| *z).collect();
        let tag = format_level(r);
        let ef = rep.stat(Estimate::new(format!("refined_l2_R{tag}"), l2(&res), bootstrap_se(&res, l2, 100, exec.seed ^ i as u64), res.len()));
        let ec = rep.stat(Estimate::new(format!("crude_l2_R{tag}"), l2(&zs), bootstrap_se(&zs, l2, 100, !exec.seed ^ i as u64), zs.len()));
        fine.push((sigma, ef.estimate, ef.se));
        crude.push((sigma, ec.estimate, ec.se));
    }
    for (name, pts, window) in [("refined", &fine, fine_window), ("crude", &crude, crude_window)] {
        let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
        let errs: Vec<f64> = pts.iter().map(|p| p.2 / p.1).collect();
        let (slope, _) = ols_slope(&xs, &ys);
        let (_, se) = wls_slope(&xs, &ys, &errs);
        rep.stat(Estimate::new(format!("{name}_slope"), slope, se, pts.len()));
        rep.check(Check::within(format!("{name}_slope"), slope, window.0, window.1));
        rep.series(&format!("{name}_l2_vs_sigma"), pts.clone());
    }
    Ok(rep)
}

// ---------------------------------------------------------------------------
// Sup of |r2|

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Supr2Params {
    pub potential: Potential,
    pub integrator: Integrator,
    pub t: f64,
    pub big_t: f64,
    pub d: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub r2_0: f64,
}

impl Default for Supr2Params {
    fn default() -> Self {
        Self {
            potential: Potential::Cos,
            integrator: Integrator::Split,
            t: 1.0,
            big_t: 100.0,
            d: 6.0,
            dt: 0.01,
            n_paths: 10_000,
            r2_0: 0.0,
        }
    }
}

pub fn supr2_experiment(p: &Supr2Params, exec: &Exec) -> Result<Report, VerifyError> {
    require_positive(&[("t", p.t), ("T", p.big_t), ("D", p.d), ("dt", p.dt)])?;
    require_paths(p.n_paths)?;
    let mut rep = Report::new("supr2", p.potential, p.integrator, p.dt, p.n_paths);
    rep.constant("t", p.t);
    rep.constant("T", p.big_t);
    rep.constant("D", p.d);
    let n = steps_for(p.t * p.big_t, p.dt);
    let sups = run_ensemble(exec, p.n_paths, |_, noise| {
        let mut st = Stepper::new(PhaseState::new(0.0, p.r2_0, 0.0, 0.0), p.potential, p.dt, p.integrator)?;
        let mut m = p.r2_0.abs();
        for _ in 0..n {
            st.advance(noise)?;
            m = m.max(st.state().r2.abs());
        }
        Ok(m)
    })?;
    let exceed = |d: f64| sups.iter().map(|s| *s > p.r2_0.abs() + d).collect::<Vec<_>>();
    let prob = indicator_mean("sup_r2_exceedance", &exceed(p.d));
    let bound = doob_bound(p.t, p.big_t, p.d);
    let se = binomial_se(prob.estimate, p.n_paths);
    rep.stat(Estimate::new("sup_r2_exceedance", prob.estimate, se, p.n_paths));
    rep.stat(Estimate::new("doob_bound", bound, 0.0, 1));
    rep.check(Check::at_most("sup_r2_exceedance", prob.estimate, bound + 4.0 * se));
    let ds: Vec<f64> = (2..=12).map(|k| 0.5 * k as f64).collect();
    rep.series(
        "exceedance_vs_D",
        ds.iter()
            .map(|d| {
                let e = indicator_mean("", &exceed(*d));
                (*d, e.estimate, binomial_se(e.estimate, p.n_paths))
            })
            .collect(),
    );
    rep.series("doob_bound_vs_D", ds.iter().map(|d| (*d, doob_bound(p.t, p.big_t, *d), 0.0)).collect());
    Ok(rep)
}

// ---------------------------------------------------------------------------
// Increment moments, moment ladder at rotation times, corridor exit

#[derive(Debug, Clone, PartialEq)]
pub struct MomentsParams {
    pub potential: Potential,
    pub integrator: Integrator,
    pub scaling: ScalingParams,
    pub levels: Vec<f64>,
    pub n_paths: usize,
    pub dt: Option<f64>,
    pub r2_0: f64,
    pub ladder_level: f64,
    pub ladder_r2_0: f64,
    pub ladder_paths: usize,
}

impl Default for MomentsParams {
    fn default() -> Self {
        Self {
            potential: Potential::Cos,
            integrator: Integrator::Split,
            scaling: ScalingParams::default(),
            levels: vec![64.0, 256.0],
            n_paths: 10_000,
            dt: None,
            r2_0: 0.0,
            ladder_level: 128.0,
            ladder_r2_0: 2.0,
            ladder_paths: 2000,
        }
    }
}

impl MomentsParams {
    /// Explicit `dt`, or the coarsest grid the rotation schedule accepts at `level`.
    fn dt_at(&self, level: f64) -> f64 {
        let c = self.scaling.with_level(level).corridor();
        let max = 1.0 / (10.0 * (level + 2.0 * c));
        self.dt.map_or(max.min(1e-3), |dt| dt.min(max))
    }
}

/// Increments `r1(t(R)) - r1(0)` from `r1(0) = R`.
pub fn increment_samples(
    p: &MomentsParams,
    level: f64,
    pot: Potential,
    dt: f64,
    exec: &Exec,
    n_paths: usize,
) -> Result<Vec<f64>, VerifyError> {
    let t = p.scaling.with_level(level).horizon();
    let n = (t / dt).round().max(1.0) as u64;
    let dt = t / n as f64;
    run_ensemble(exec, n_paths, |_, noise| {
        let theta1 = uniform_angle(noise);
        let mut st = Stepper::new(PhaseState::new(level, p.r2_0, theta1, 0.0), pot, dt, p.integrator)?;
        for _ in 0..n {
            st.advance(noise)?;
        }
        Ok(st.state().r1 - level)
    })
}

/// `r2(σ_k)` for `k = 0..=ñ`, and `τ_c` when it falls before `t(R)`.
pub type LadderSample = (Vec<f64>, Option<f64>);

pub fn ladder_samples(p: &MomentsParams, exec: &Exec) -> Result<Vec<LadderSample>, VerifyError> {
    let level = p.ladder_level;
    let sp = p.scaling.with_level(level);
    let dt = p.dt_at(level);
    let horizon = sp.horizon() + 2.0 * FULL_TURN / (level - sp.corridor()).max(1.0);
    run_ensemble(exec, p.ladder_paths, |_, noise| {
        let theta1 = uniform_angle(noise);
        let init = PhaseState::new(level, p.ladder_r2_0, theta1, 0.0);
        let traj = simulate(init, p.potential, horizon, dt, noise, 1, p.integrator)?;
        let sched = rotation_schedule(&traj, &p.scaling)?;
        let r2 = r2_path(&traj);
        let vals = sched.sigma.iter().map(|s| r2.nearest(*s)).collect();
        Ok((vals, sched.tau_c.filter(|tc| *tc < sp.horizon())))
    })
}

pub fn moments_experiment(p: &MomentsParams, exec: &Exec) -> Result<Report, VerifyError> {
    require_paths(p.n_paths)?;
    require_paths(p.ladder_paths)?;
    p.scaling.validate().map_err(|e| invalid(e.0))?;
    let top = p.levels.iter().copied().fold(0.0, f64::max);
    let mut rep = Report::new("moments", p.potential, p.integrator, p.dt_at(top), p.n_paths);
    let (drift_coef, rel) = (0.1, 0.05);
    rep.constant("drift_coefficient", drift_coef);
    rep.constant("diffusion_relative_tolerance", rel);
    rep.constant("alpha_t", p.scaling.alpha_t);
    rep.constant("alpha_c", p.scaling.alpha_c);
    rep.constant("corridor_exit_probability_bound", 0.01);

    let mut drift_rows = Vec::new();
    let mut diff_rows = Vec::new();
    for (i, &level) in p.levels.iter().enumerate() {
        if level < 64.0 {
            return Err(invalid(format!("increment moments need R >= 64 (got {level})")));
        }
        let t = p.scaling.with_level(level).horizon();
        let tag = format_level(level);
        let d = increment_samples(p, level, p.potential, p.dt_at(level), &exec.sub(10 + i as u64), p.n_paths)?;
        let e1 = rep.stat(Estimate::of_mean(format!("increment_mean_R{tag}"), &d));
        let sq: Vec<f64> = d.iter().map(|x| x * x).collect();
        let e2 = rep.stat(Estimate::of_mean(format!("increment_second_moment_R{tag}"), &sq));
        rep.check(Check::at_most(format!("increment_mean_R{tag}"), e1.estimate.abs(), 4.0 * e1.se + drift_coef * t / level));
        rep.check(Check::near(format!("increment_second_moment_R{tag}"), e2.estimate, t, (4.0 * e2.se).max(rel * t)));
        drift_rows.push((level, e1.estimate, e1.se));
        diff_rows.push((level, e2.estimate / t, e2.se / t));

        // decoupled: the increment is exactly W1(t)
        let z = increment_samples(p, level, Potential::Zero, t / 16.0, &exec.sub(20 + i as u64), p.n_paths)?;
        let sq: Vec<f64> = z.iter().map(|x| x * x).collect();
        let e0 = rep.stat(Estimate::of_mean(format!("decoupled_increment_second_moment_R{tag}"), &sq));
        rep.check(Check::near(format!("decoupled_increment_second_moment_R{tag}"), e0.estimate, t, 4.0 * e0.se));
    }
    rep.series("increment_mean_vs_R", drift_rows);
    rep.series("increment_second_moment_over_t_vs_R", diff_rows);

    let ladder = ladder_samples(p, &exec.sub(30))?;
    let level = p.ladder_level;
    let kmax = ladder.iter().map(|(v, _)| v.len()).max().unwrap_or(0);
    let mut worst = f64::NEG_INFINITY;
    let mut worst_k = 0;
    let mut rows = Vec::new();
    for k in 0..kmax {
        let fourth: Vec<f64> = ladder.iter().filter_map(|(v, _)| v.get(k)).map(|x| x.powi(4)).collect();
        if fourth.len() < 2 {
            continue;
        }
        let m = Estimate::of_mean("", &fourth);
        let norm = m.estimate.powf(0.25);
        let se = if m.estimate > 0.0 { m.se / (4.0 * m.estimate.powf(0.75)) } else { 0.0 };
        let bound = 2.0 * p.ladder_r2_0.abs() * (-(k as f64) / level).exp() + 3.0;
        let margin = norm - bound - 4.0 * se;
        if margin > worst {
            worst = margin;
            worst_k = k;
        }
        rows.push((k as f64, norm, se));
    }
    rep.stat(Estimate::new("ladder_worst_margin", worst, 0.0, p.ladder_paths));
    rep.stat(Estimate::new("ladder_worst_k", worst_k as f64, 0.0, p.ladder_paths));
    rep.check(Check::at_most("ladder_l4_norm", worst, 0.0));
    rep.series("ladder_l4_norm_vs_k", rows);

    let sp = p.scaling.with_level(level);
    let exits: Vec<bool> = ladder.iter().map(|(_, tc)| tc.is_some()).collect();
    let e = rep.stat(indicator_mean("corridor_exit_probability", &exits));
    rep.stat(Estimate::new(
        "corridor_exit_probability_brownian",
        bm_two_sided_exit_probability(sp.corridor(), sp.horizon()),
        0.0,
        1,
    ));
    rep.check(Check::at_most("corridor_exit_probability", e.estimate, 0.01));
    Ok(rep)
}

// ---------------------------------------------------------------------------
// Decorrelation of the damped particle

#[derive(Debug, Clone, PartialEq)]
pub struct DecorrelationParams {
    pub potential: Potential,
    pub integrator: Integrator,
    pub level: f64,
    pub r2_0: f64,
    pub theta2_0: f64,
    pub thetas0: Vec<f64>,
    pub times: Vec<f64>,
    pub n_paths: usize,
    pub dt: f64,
    pub analogue_dt: f64,
}

impl Default for DecorrelationParams {
    fn default() -> Self {
        Self {
            potential: Potential::Cos,
            integrator: Integrator::Split,
            level: 256.0,
            r2_0: 1.0,
            theta2_0: 0.0,
            thetas0: (0..10).map(|j| TAU * j as f64 / 10.0).collect(),
            times: vec![5.0, 10.0, 20.0],
            n_paths: 10_000,
            dt: 1e-3,
            analogue_dt: 0.01,
        }
    }
}

/// `(r2(t), θ2(t))` at each requested time.
pub fn decorrelation_samples(p: &DecorrelationParams, exec: &Exec) -> Result<Vec<Vec<(f64, f64)>>, VerifyError> {
    let steps: Vec<u64> = p.times.iter().map(|t| steps_for(*t, p.dt)).collect();
    run_ensemble(exec, p.n_paths, |_, noise| {
        let mut st = Stepper::new(PhaseState::new(p.level, p.r2_0, p.theta2_0, p.theta2_0), p.potential, p.dt, p.integrator)?;
        let mut out = Vec::with_capacity(steps.len());
        for &n in &steps {
            while st.steps() < n {
                st.advance(noise)?;
            }
            out.push((st.state().r2, st.state().theta2));
        }
        Ok(out)
    })
}

pub fn decorrelation_experiment(p: &DecorrelationParams, exec: &Exec) -> Result<Report, VerifyError> {
    require_positive(&[("dt", p.dt), ("R", p.level)])?;
    require_paths(p.n_paths)?;
    if p.times.is_empty() || p.thetas0.is_empty() {
        return Err(invalid("decorrelation needs at least one time and one reference angle"));
    }
    let mut rep = Report::new("decorrelation", p.potential, p.integrator, p.dt, p.n_paths);
    let tol = 0.02;
    rep.constant("tolerance", tol);
    rep.constant("R", p.level);
    let samples = decorrelation_samples(p, exec)?;
    let stat = |j: usize, th0: f64| -> Estimate {
        let xs: Vec<f64> = samples.iter().map(|s| s[j].0 * p.potential.d1(s[j].1 - th0)).collect();
        Estimate::of_mean("", &xs)
    };
    let last = p.times.len() - 1;
    let mut rows = Vec::new();
    let mut worst_increase = f64::NEG_INFINITY;
    for (i, th0) in p.thetas0.iter().enumerate() {
        let ests: Vec<Estimate> = (0..p.times.len()).map(|j| stat(j, *th0)).collect();
        for (j, e) in ests.iter().enumerate() {
            let mut e = e.clone();
            e.name = format!("correlation_theta{i}_t{}", format_level(p.times[j]));
            rep.stat(e);
        }
        let e = &ests[last];
        rep.check(Check::at_most(format!("correlation_theta{i}_final"), e.estimate.abs(), 4.0 * e.se + tol));
        for w in ests.windows(2) {
            let slack = 4.0 * (w[0].se.powi(2) + w[1].se.powi(2)).sqrt();
            worst_increase = worst_increase.max(w[1].estimate.abs() - w[0].estimate.abs() - slack);
        }
        if i == 0 {
            rows = p.times.iter().zip(&ests).map(|(t, e)| (*t, e.estimate, e.se)).collect();
        }
    }
    rep.stat(Estimate::new("correlation_worst_increase", worst_increase, 0.0, p.n_paths));
    rep.check(Check::at_most("correlation_nonincreasing", worst_increase, 0.0));
    rep.series("correlation_theta0_vs_t", rows);

    // decoupled analogue from its invariant law
    let t_final = p.times[last];
    let paths = run_ensemble(&exec.sub(ORACLE_SALT), p.n_paths, |_, noise| {
        let a = AnalogueState::stationary(noise.aux());
        let path = simulate_analogue(a, t_final, p.analogue_dt, noise, usize::MAX.min(steps_for(t_final, p.analogue_dt) as usize), false)?;
        Ok((*path.r.last().unwrap_or(&a.r), *path.theta.last().unwrap_or(&a.theta)))
    })?;
    let mut worst = f64::NEG_INFINITY;
    for (i, th0) in p.thetas0.iter().enumerate() {
        let xs: Vec<f64> = paths.iter().map(|(r, th)| r * p.potential.d1(th - th0)).collect();
        let e = Estimate::of_mean(format!("analogue_correlation_theta{i}"), &xs);
        worst = worst.max(e.estimate.abs() - 4.0 * e.se);
        rep.stat(e);
    }
    rep.check(Check::at_most("analogue_correlation_zero", worst, 0.0));
    Ok(rep)
}

// ---------------------------------------------------------------------------
// Exit from the interval around R, and from a neighbourhood of the origin

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitParams {
    pub potential: Potential,
    pub integrator: Integrator,
    pub scaling: ScalingParams,
    pub n_paths: usize,
    pub dt: f64,
    pub control_dt: f64,
    /// Exit-time cap in units of `R²`.
    pub time_cap: f64,
    /// Starting `|r1(0)|` of the near-origin exit.
    pub origin_start: f64,
    pub origin_paths: usize,
}

impl Default for ExitParams {
    fn default() -> Self {
        Self {
            potential: Potential::Cos,
            integrator: Integrator::Split,
            scaling: ScalingParams::default(),
            n_paths: 1000,
            dt: 0.01,
            control_dt: 0.05,
            time_cap: 50.0,
            origin_start: 0.5,
            origin_paths: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitSample {
    pub time: f64,
    pub lower: bool,
    /// Stopped by the `r2` cap or the time cap rather than by `|r1|`.
    pub stopped: bool,
}

/// Exit of `|r1|^β` from `[R^β/2, 2R^β]` from `r1(0) = R`, stopped when
/// `|r2|` reaches `R^α` or after `time_cap · R²`.
pub fn exit_samples(p: &ExitParams, pot: Potential, dt: f64, exec: &Exec, n_paths: usize) -> Result<Vec<ExitSample>, VerifyError> {
    let sp = p.scaling;
    let r = sp.r_level;
    let (lo, hi) = (r * 0.5f64.powf(1.0 / sp.beta), r * 2.0f64.powf(1.0 / sp.beta));
    let cap = sp.r2_cap();
    let n_max = steps_for(p.time_cap * r * r, dt);
    run_ensemble(exec, n_paths, |_, noise| {
        let theta1 = uniform_angle(noise);
        let mut st = Stepper::new(PhaseState::new(r, 0.0, theta1, 0.0), pot, dt, p.integrator)?;
        while st.steps() < n_max {
            st.advance(noise)?;
            let s = st.state();
            let a = s.r1.abs();
            if a <= lo || a >= hi {
                return Ok(ExitSample { time: st.time(), lower: a <= lo, stopped: false });
            }
            if s.r2.abs() >= cap {
                return Ok(ExitSample { time: st.time(), lower: false, stopped: true });
            }
        }
        Ok(ExitSample { time: st.time(), lower: false, stopped: true })
    })
}

/// First time `|r1| >= a` from `r1(0) = x0`.
pub fn origin_exit_samples(p: &ExitParams, a: f64, exec: &Exec) -> Result<Vec<f64>, VerifyError> {
    let n_max = steps_for(p.time_cap * a * a.max(1.0) * 100.0, p.dt);
    run_ensemble(exec, p.origin_paths, |_, noise| {
        let theta1 = uniform_angle(noise);
        let mut st = Stepper::new(PhaseState::new(p.origin_start, 0.0, theta1, 0.0), p.potential, p.dt, p.integrator)?;
        while st.steps() < n_max && st.state().r1.abs() < a {
            st.advance(noise)?;
        }
        Ok(st.time())
    })
}

pub fn exit_experiment(p: &ExitParams, exec: &Exec) -> Result<Report, VerifyError> {
    require_paths(p.n_paths)?;
    require_paths(p.origin_paths)?;
    require_positive(&[("dt", p.dt), ("control dt", p.control_dt)])?;
    let sp = p.scaling;
    if !(sp.beta > 1.0) {
        return Err(invalid(format!("beta must satisfy beta > 1 (got {})", sp.beta)));
    }
    let r = sp.r_level;
    let mut rep = Report::new("exit", p.potential, p.integrator, p.dt, p.n_paths);
    let kappa = 0.1;
    let (lo, hi) = (r * 0.5f64.powf(1.0 / sp.beta), r * 2.0f64.powf(1.0 / sp.beta));
    let lead = (2.0f64.powf(1.0 / sp.beta) - 1.0) * (1.0 - 0.5f64.powf(1.0 / sp.beta));
    rep.constant("kappa", kappa);
    rep.constant("exit_time_leading_coefficient", lead);
    rep.constant("lower_exit_bound", 2.0 / 3.0);
    rep.constant("R", r);
    rep.constant("beta", sp.beta);

    let s = exit_samples(p, p.potential, p.dt, exec, p.n_paths)?;
    let times: Vec<f64> = s.iter().map(|x| x.time).collect();
    let e = rep.stat(Estimate::of_mean("exit_time", &times));
    rep.check(Check::at_most("exit_time", e.estimate, (lead + kappa) * r * r + 4.0 * e.se));
    let low = rep.stat(indicator_mean("lower_exit_probability", &s.iter().map(|x| x.lower).collect::<Vec<_>>()));
    rep.check(Check::at_most("lower_exit_probability", low.estimate, 2.0 / 3.0 + 4.0 * low.se));
    rep.stat(indicator_mean("exit_stopped_fraction", &s.iter().map(|x| x.stopped).collect::<Vec<_>>()));

    let c = exit_samples(p, Potential::Zero, p.control_dt, &exec.sub(1), p.n_paths)?;
    let ct: Vec<f64> = c.iter().map(|x| x.time).collect();
    let ce = rep.stat(Estimate::of_mean("decoupled_exit_time", &ct));
    rep.check(Check::near("decoupled_exit_time", ce.estimate, bm_exit_time(r, lo, hi), 4.0 * ce.se));
    let cl = rep.stat(indicator_mean("decoupled_lower_exit_probability", &c.iter().map(|x| x.lower).collect::<Vec<_>>()));
    let target = bm_lower_exit_probability(r, lo, hi);
    rep.check(Check::near("decoupled_lower_exit_probability", cl.estimate, target, 4.0 * cl.se));

    // near the origin
    let a = sp.near_origin_level();
    let worst_residual = (1..=100)
        .map(|i| exit_ode_residual(a * i as f64 / 101.0, a, 1e-3 * a))
        .fold(0.0, f64::max);
    rep.stat(Estimate::new("exit_ode_residual", worst_residual, 0.0, 100));
    rep.check(Check::at_most("exit_ode_residual", worst_residual, 1e-9));
    let boundary = exit_ode_u(a, a).map_err(|e| invalid(e.to_string()))?.abs() + exit_ode_du(0.0).abs();
    rep.check(Check::at_most("exit_ode_boundary", boundary, 0.0));
    let u0 = exit_ode_u(p.origin_start, a).map_err(|e| invalid(e.to_string()))?;
    let o = origin_exit_samples(p, a, &exec.sub(2))?;
    let eo = rep.stat(Estimate::of_mean("origin_exit_time", &o));
    rep.stat(Estimate::new("exit_ode_bound", u0, 0.0, 1));
    rep.check(Check::at_most("origin_exit_time", eo.estimate, u0 + 4.0 * eo.se));

    let mut hist = vec![0usize; 20];
    let width = (lead + kappa) * r * r / 5.0;
    for t in &times {
        let b = ((t / width) as usize).min(19);
        hist[b] += 1;
    }
    rep.series(
        "exit_time_histogram",
        hist.iter()
            .enumerate()
            .map(|(i, c)| {
                let f = *c as f64 / p.n_paths as f64;
                ((i as f64 + 0.5) * width, f, binomial_se(f, p.n_paths))
            })
            .collect(),
    );
    Ok(rep)
}

// ---------------------------------------------------------------------------
// Excursions and time near the origin

#[derive(Debug, Clone, PartialEq)]
pub struct ExcursionParams {
    pub potential: Potential,
    pub integrator: Integrator,
    pub epsilon: f64,
    pub big_t: f64,
    pub n_paths: usize,
    pub dt: f64,
    /// Horizon in diffusive units; paths still out at `t_max` contribute `e^{-t_max}`.
    pub t_max: f64,
    pub oracle_paths: usize,
    /// Grid of the exact Brownian control, diffusive units.
    pub oracle_dt: f64,
    pub count_epsilons: Vec<f64>,
    pub count_paths: usize,
    pub count_dt: f64,
}

impl Default for ExcursionParams {
    fn default() -> Self {
        Self {
            potential: Potential::Cos,
            integrator: Integrator::Split,
            epsilon: 0.1,
            big_t: 2048.0,
            n_paths: 2000,
            dt: 0.01,
            t_max: 5.0,
            oracle_paths: 10_000,
            oracle_dt: 1e-4,
            count_epsilons: vec![0.2, 0.1, 0.05],
            count_paths: 1000,
            count_dt: 2e-5,
        }
    }
}

/// `η` (diffusive units) from `|X_0| = 2ε`, or `None` past `t_max`.
pub fn excursion_eta_samples(p: &ExcursionParams, exec: &Exec) -> Result<Vec<Option<f64>>, VerifyError> {
    let root = p.big_t.sqrt();
    let (start, level) = (2.0 * p.epsilon * root, p.epsilon * root);
    let n_max = steps_for(p.t_max * p.big_t, p.dt);
    run_ensemble(exec, p.n_paths, |_, noise| {
        let theta1 = uniform_angle(noise);
        let mut st = Stepper::new(PhaseState::new(start, 0.0, theta1, 0.0), p.potential, p.dt, p.integrator)?;
        while st.steps() < n_max {
            st.advance(noise)?;
            if st.state().r1.abs() <= level {
                return Ok(Some(st.time() / p.big_t));
            }
        }
        Ok(None)
    })
}

pub fn excursions_experiment(p: &ExcursionParams, exec: &Exec) -> Result<Report, VerifyError> {
    require_positive(&[("epsilon", p.epsilon), ("T", p.big_t), ("dt", p.dt), ("t_max", p.t_max)])?;
    require_paths(p.n_paths)?;
    let mut rep = Report::new("excursions", p.potential, p.integrator, p.dt, p.n_paths);
    let kappa = 0.05;
    rep.constant("kappa", kappa);
    rep.constant("epsilon", p.epsilon);
    rep.constant("T", p.big_t);
    rep.constant("t_max", p.t_max);
    let laplace = |eta: &Option<f64>| eta.map_or((-p.t_max).exp(), |t| (-t).exp());

    let etas = excursion_eta_samples(p, exec)?;
    let vals: Vec<f64> = etas.iter().map(laplace).collect();
    let e = rep.stat(Estimate::of_mean("laplace_eta", &vals));
    rep.stat(indicator_mean("eta_censored_fraction", &etas.iter().map(Option::is_none).collect::<Vec<_>>()));
    rep.check(Check::at_most("laplace_eta", e.estimate, 1.0 - kappa * p.epsilon + 4.0 * e.se));
    rep.check(Check::at_most("laplace_eta_at_most_one", e.estimate, 1.0));

    let t_max = p.t_max;
    let bm = run_ensemble(&exec.sub(ORACLE_SALT), p.oracle_paths, |_, noise| {
        Ok(sample_bm_hitting_time(2.0 * p.epsilon, p.epsilon, p.oracle_dt, t_max, noise))
    })?;
    let bvals: Vec<f64> = bm.iter().map(laplace).collect();
    let o = rep.stat(Estimate::of_mean("oracle_laplace_eta", &bvals));
    let exact = bm_hitting_laplace(p.epsilon, 1.0);
    rep.stat(Estimate::new("brownian_laplace_eta", exact, 0.0, 1));
    rep.check(Check::near("oracle_laplace_eta", o.estimate, exact, 4.0 * o.se));
    rep.check(Check::at_most("laplace_eta_vs_brownian", e.estimate, exact + 4.0 * e.se));

    // complete 2ε -> ε excursions of reflected BM before t = 1
    let n = (1.0 / p.count_dt).round() as usize;
    let grid: Vec<f64> = (0..=n).map(|i| i as f64 * p.count_dt).collect();
    let counts = run_ensemble(&exec.sub(3), p.count_paths, |_, noise| {
        let path = Path::new(grid.clone(), sample_reflected_bm(&grid, noise));
        Ok(p.count_epsilons.iter().map(|e| excursions(&path, *e, None, 1.0, 1.0).complete() as f64).collect::<Vec<_>>())
    })?;
    let mut rows = Vec::new();
    for (j, eps) in p.count_epsilons.iter().enumerate() {
        let xs: Vec<f64> = counts.iter().map(|c| c[j]).collect();
        let e = rep.stat(Estimate::of_mean(format!("excursion_count_eps{}", format_level(*eps)), &xs));
        rows.push((*eps, e.estimate, e.se));
    }
    for j in 1..p.count_epsilons.len() {
        let a: Vec<f64> = counts.iter().map(|c| c[j - 1]).collect();
        let b: Vec<f64> = counts.iter().map(|c| c[j]).collect();
        let (ma, mb) = (mean(&a), mean(&b));
        let ratio = mb / ma;
        let resid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (y - ratio * x) / ma).collect();
        let se = Estimate::of_mean("", &resid).se;
        let step = p.count_epsilons[j - 1] / p.count_epsilons[j];
        let name = format!("excursion_count_ratio_eps{}", format_level(p.count_epsilons[j]));
        rep.stat(Estimate::new(name.clone(), ratio, se, p.count_paths));
        rep.check(Check::within(name, ratio, 0.7 * step - 4.0 * se, 1.3 * step + 4.0 * se));
    }
    rep.series("excursion_count_vs_epsilon", rows);
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearZeroParams {
    pub potential: Potential,
    pub integrator: Integrator,
    pub epsilon: f64,
    pub big_t: f64,
    pub alpha2: f64,
    pub n_paths: usize,
    pub dt: f64,
}

impl Default for NearZeroParams {
    fn default() -> Self {
        Self {
            potential: Potential::Cos,
            integrator: Integrator::Split,
            epsilon: 0.1,
            big_t: 2048.0,
            alpha2: 5.0 / 9.0,
            n_paths: 4000,
            dt: 0.01,
        }
    }
}

/// `τ(ε√T) ∧ ζ` from `init`: the first time `|r1| >= ε√T` or `|r2| >= (log T)^α2`.
pub fn near_zero_time(init: PhaseState, p: &NearZeroParams, epsilon: f64, noise: &mut NoiseStream) -> Result<f64, SimError> {
    let level = epsilon * p.big_t.sqrt();
    let cap = p.big_t.ln().powf(p.alpha2);
    let mut st = Stepper::new(init, p.potential, p.dt, p.integrator)?;
    while st.state().r1.abs() < level && st.state().r2.abs() < cap {
        st.advance(noise)?;
    }
    Ok(st.time())
}

pub fn near_zero_experiment(p: &NearZeroParams, exec: &Exec) -> Result<Report, VerifyError> {
    require_positive(&[("epsilon", p.epsilon), ("T", p.big_t), ("dt", p.dt)])?;
    require_paths(p.n_paths)?;
    let mut rep = Report::new("near-zero", p.potential, p.integrator, p.dt, p.n_paths);
    let c = 10.0;
    rep.constant("constant_c", c);
    rep.constant("doubling_ratio_low", 2.5);
    rep.constant("doubling_ratio_high", 6.0);
    rep.constant("epsilon", p.epsilon);
    rep.constant("T", p.big_t);
    let mut rows = Vec::new();
    let mut ests = Vec::new();
    for (k, eps) in [p.epsilon, 2.0 * p.epsilon].into_iter().enumerate() {
        let ts = run_ensemble(exec, p.n_paths, |_, noise| Ok(near_zero_time(PhaseState::origin(), p, eps, noise)?))?;
        let name = if k == 0 { "time_near_zero".to_string() } else { "time_near_zero_doubled".to_string() };
        let e = rep.stat(Estimate::of_mean(name, &ts));
        rows.push((eps, e.estimate, e.se));
        ests.push((e, ts));
    }
    let (e1, t1) = &ests[0];
    rep.check(Check::at_most("time_near_zero", e1.estimate, c * p.epsilon.powi(2) * p.big_t + 4.0 * e1.se));
    let (e2, t2) = &ests[1];
    let ratio = e2.estimate / e1.estimate;
    let resid: Vec<f64> = t1.iter().zip(t2).map(|(a, b)| (b - ratio * a) / e1.estimate).collect();
    rep.stat(Estimate::new("time_near_zero_doubling_ratio", ratio, Estimate::of_mean("", &resid).se, p.n_paths));
    rep.check(Check::within("time_near_zero_doubling_ratio", ratio, 2.5, 6.0));
    rep.series("time_near_zero_vs_epsilon", rows);
    Ok(rep)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ensemble_of_one_matches_simulate() {
        let exec = Exec::new(5);
        let init = PhaseState::new(3.0, 0.5, 1.0, 2.0);
        let runs = run_ensemble(&exec, 1, |_, noise| Ok(simulate(init, Potential::Cos, 2.0, 0.01, noise, 1, Integrator::Split)?)).unwrap();
        let direct = simulate(init, Potential::Cos, 2.0, 0.01, &mut NoiseStream::new(5, 0), 1, Integrator::Split).unwrap();
        assert_eq!(runs[0], direct);
    }

    #[test]
    fn ensemble_is_worker_invariant() {
        let f = |_: u64, noise: &mut NoiseStream| -> Result<f64, PathError> {
            let mut st = Stepper::new(PhaseState::new(1.0, 0.0, 0.0, 0.0), Potential::Mixed, 0.01, Integrator::Split)?;
            for _ in 0..200 {
                st.advance(noise)?;
            }
            Ok(st.state().r1)
        };
        let a = run_ensemble(&Exec::new(9).with_workers(1), 64, f).unwrap();
        let b = run_ensemble(&Exec::new(9).with_workers(4), 64, f).unwrap();
        let c = run_ensemble(&Exec::new(9).with_workers(16), 64, f).unwrap();
        assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(a, c);
    }

    #[test]
    fn ensemble_reports_first_failing_index() {
        let err = run_ensemble(&Exec::new(3).with_workers(4), 20, |i, _| {
            if i == 7 || i == 12 {
                Err(SimError::Diverged { step: i }.into())
            } else {
                Ok(i)
            }
        })
        .unwrap_err();
        assert_eq!(err, VerifyError::Path { seed: 3, index: 7, source: PathError::Sim(SimError::Diverged { step: 7 }) });
        assert!(err.to_string().contains("trajectory 7 of master seed 3"));
    }

    #[test]
    fn diverging_path_names_seed_and_index() {
        let p = SimulateParams { dt: f64::NAN, ..Default::default() };
        assert!(simulate_experiment(&p, &Exec::new(1)).is_err());
    }

    #[test]
    fn check_constructors() {
        assert!(Check::at_most("a", 1.0, 1.0).passed);
        assert!(!Check::at_most("a", f64::NAN, 1.0).passed);
        assert!(Check::near("b", 1.05, 1.0, 0.1).passed);
        assert!(!Check::within("c", 3.0, 1.0, 2.0).passed);
    }

    #[test]
    fn constant_test_function_has_zero_defect() {
        let spec = MartingaleTestSpec::new(TestFunction::ONE, 10.0);
        let times: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
        let x: Vec<f64> = times.iter().map(|t| (10.0 * t).sin()).collect();
        assert_eq!(martingale_defect_path(&spec, &times, &x), 0.0);
    }

    #[test]
    fn martingale_spec_validation() {
        MartingaleTestSpec::new(TestFunction::GAUSSIAN, 10.0).validate().unwrap();
        MartingaleTestSpec::new(TestFunction::CAUCHY, 10.0).validate().unwrap();
        let tilted = TestFunction { name: "tilted", f: |x| (-x).exp(), d1: |x| -(-x).exp(), d2: |x| (-x).exp(), d3: |x| -(-x).exp() };
        assert!(MartingaleTestSpec::new(tilted, 10.0).validate().is_err());
        let blowup = TestFunction { name: "blowup", f: |x| 1.0 + x * x * x * x, d1: |x| 4.0 * x.powi(3), d2: |x| 12.0 * x * x, d3: |x| 1.0 / (x - 20.0) };
        assert!(MartingaleTestSpec::new(blowup, 10.0).validate().is_err());
    }

    #[test]
    fn martingale_defect_of_deterministic_path() {
        // X_s = s, f = e^{-x²}: f(1) - f(0) - ½∫ f'' = e^{-1} - 1 - ½(f'(1) - f'(0))
        let spec = MartingaleTestSpec::new(TestFunction::GAUSSIAN, 1.0);
        let times: Vec<f64> = (0..=2000).map(|i| i as f64 / 2000.0).collect();
        let d = martingale_defect_path(&spec, &times, &times);
        let exact = (-1.0f64).exp() - 1.0 - 0.5 * (-2.0 * (-1.0f64).exp());
        assert!((d - exact).abs() < 1e-6, "{d} vs {exact}");
        let stopped = MartingaleTestSpec { epsilon: Some(0.5), ..spec };
        let down: Vec<f64> = times.iter().map(|t| 1.0 - t).collect();
        let d = martingale_defect_path(&stopped, &times, &down);
        let g = |x: f64| (-x * x).exp();
        let dg = |x: f64| -2.0 * x * g(x);
        // X runs from 1 to 0.5, ds = -dx
        let exact = g(0.5) - g(1.0) - 0.5 * (dg(1.0) - dg(0.5));
        assert!((d - exact).abs() < 1e-6, "{d} vs {exact}");
    }

    #[test]
    fn reflected_bm_martingale_control() {
        let times: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
        let paths = run_ensemble(&Exec::new(21), 4000, |_, noise| Ok(sample_reflected_bm(&times, noise))).unwrap();
        for f in [TestFunction::GAUSSIAN, TestFunction::CAUCHY] {
            let e = martingale_defect(&MartingaleTestSpec::new(f, 1.0), &times, &paths).unwrap();
            assert!(e.estimate.abs() <= 4.0 * e.se + 0.01, "{}: {} ± {}", f.name, e.estimate, e.se);
        }
        let coarse: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        assert!(martingale_defect(&MartingaleTestSpec::new(TestFunction::GAUSSIAN, 1.0), &coarse, &[coarse.clone()]).is_err());
    }

    #[test]
    fn diffusive_grid_choices() {
        assert_eq!(diffusive_grid(2048.0, 0.01).unwrap(), (204_800, 200));
        assert!(diffusive_grid(2048.0, 0.03).is_err());
        let (n, d) = diffusive_grid(20.0, 0.01).unwrap();
        assert!(n / d >= 1000 && (n / d) % 2 == 0);
    }

    #[test]
    fn small_limit_run_is_consistent() {
        let p = LimitParams { big_t: 20.0, n_paths: 400, ..Default::default() };
        let ens = limit_ensemble(&p, &Exec::new(4)).unwrap();
        assert_eq!(ens.x.len(), 400);
        assert_eq!(ens.times.len(), 1001);
        let rep = limit_report(&p, &ens);
        assert!(rep.find_stat("ks_statistic").unwrap().estimate < 0.15);
        assert!(rep.find_check("increment_second_moment").is_some());
    }

    #[test]
    fn expansion_decoupled_is_exactly_zero() {
        let p = ExpansionParams { potential: Potential::Zero, n_paths: 50, ..Default::default() };
        for r in [8.0, 64.0] {
            let s = expansion_samples(&p, r, 1.0, &Exec::new(2)).unwrap();
            assert!(s.iter().all(|(res, z)| *res == 0.0 && *z == 0.0));
        }
        let p = ExpansionParams { dt: Some(0.01), n_paths: 10, ..Default::default() };
        assert!(matches!(expansion_samples(&p, 8.0, 0.0, &Exec::new(2)), Err(VerifyError::Invalid(_))));
        assert!(expansion_samples(&ExpansionParams::default(), 1.5, 0.0, &Exec::new(2)).is_err());
    }

    #[test]
    fn decorrelation_at_time_zero_is_initial_value() {
        let p = DecorrelationParams { times: vec![0.0], n_paths: 4, ..Default::default() };
        let s = decorrelation_samples(&p, &Exec::new(1)).unwrap();
        for path in &s {
            let (r2, th2) = path[0];
            assert_eq!(r2 * p.potential.d1(th2 - p.theta2_0), 0.0);
            assert_eq!(r2, 1.0);
        }
    }

    #[test]
    fn near_zero_starting_on_level_is_immediate() {
        let p = NearZeroParams::default();
        let level = p.epsilon * p.big_t.sqrt();
        let mut noise = NoiseStream::new(0, 0);
        assert_eq!(near_zero_time(PhaseState::new(level, 0.0, 0.0, 0.0), &p, p.epsilon, &mut noise).unwrap(), 0.0);
        assert_eq!(noise.cursor(), 0);
    }

    #[test]
    fn decoupled_increment_variance_is_horizon() {
        let p = MomentsParams { n_paths: 4000, ..Default::default() };
        let t = p.scaling.with_level(64.0).horizon();
        let d = increment_samples(&p, 64.0, Potential::Zero, t / 4.0, &Exec::new(8), p.n_paths).unwrap();
        let e = Estimate::of_mean("", &d.iter().map(|x| x * x).collect::<Vec<_>>());
        assert!((e.estimate - t).abs() <= 4.0 * e.se, "{} ± {} vs {t}", e.estimate, e.se);
    }

    #[test]
    fn summary_serializes_in_stable_order() {
        let mut rep = Report::new("supr2", Potential::Cos, Integrator::Split, 0.01, 3);
        rep.stat(Estimate::new("x", 1.0, 0.1, 3));
        rep.check(Check::at_most("x", 1.0, 2.0));
        rep.constant("b", 2.0);
        rep.constant("a", 1.0);
        let s = EnsembleSummary::from_report(&rep, 7, "abc");
        let json = serde_json::to_string(&s).unwrap();
        let keys = ["\"experiment\"", "\"n_paths\"", "\"master_seed\"", "\"config_digest\"", "\"passed\"", "\"stats\"", "\"checks\"", "\"metadata\""];
        let pos: Vec<usize> = keys.iter().map(|k| json.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert!(json.find("\"a\":1.0").unwrap() < json.find("\"b\":2.0").unwrap());
        assert!(s.passed);
    }

    #[test]
    fn plot_tsv_layout() {
        let series = vec![
            PlotSeries { name: "one".into(), rows: vec![(1.0, 2.0, 0.5)] },
            PlotSeries { name: "two".into(), rows: vec![] },
        ];
        let mut buf = Vec::new();
        write_plot_tsv(&mut buf, "d1g", &series).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# config_digest=d1g\n# series=one\nx\ty\ty_err\n1.0000000000000000e0\t"));
        assert!(text.contains("\n\n\n# series=two\n"));
    }

    #[test]
    fn pi_is_turn_over_two() {
        assert_eq!(FULL_TURN, 2.0 * std::f64::consts::PI);
    }
}
