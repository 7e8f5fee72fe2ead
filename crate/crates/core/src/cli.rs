//! Command-line harness: configuration, orchestration and result files.
//!
//! Exit status is 0 when every check passes, 2 when a check fails and 1 on
//! any runtime error (bad configuration, I/O, diverging path).

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{PhaseState, Potential};
use crate::observe::ScalingParams;
use crate::sde::{simulate, Integrator, NoiseStream};
use crate::verify::{
    self, DecorrelationParams, EnsembleSummary, Exec, ExcursionParams, ExitParams, ExpansionParams,
    LimitParams, MomentsParams, NearZeroParams, Report, SimulateParams, Supr2Params, VerifyError,
};

pub const SEED_ENV: &str = "DUET_SEED";
pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate,
    Limit,
    Expansion,
    Moments,
    Decorrelation,
    Exit,
    Excursions,
    NearZero,
    Martingale,
    Supr2,
}

impl Experiment {
    pub const ALL: [Experiment; 10] = [
        Experiment::Simulate,
        Experiment::Limit,
        Experiment::Expansion,
        Experiment::Moments,
        Experiment::Decorrelation,
        Experiment::Exit,
        Experiment::Excursions,
        Experiment::NearZero,
        Experiment::Martingale,
        Experiment::Supr2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Limit => "limit",
            Experiment::Expansion => "expansion",
            Experiment::Moments => "moments",
            Experiment::Decorrelation => "decorrelation",
            Experiment::Exit => "exit",
            Experiment::Excursions => "excursions",
            Experiment::NearZero => "near-zero",
            Experiment::Martingale => "martingale",
            Experiment::Supr2 => "supr2",
        }
    }

    pub fn about(self) -> &'static str {
        match self {
            Experiment::Simulate => "Record one path; check the decoupled system against the Ornstein-Uhlenbeck law",
            Experiment::Limit => "Diffusive limit: |r1(tT)|/sqrt(T) against reflected Brownian motion (KS at t = 1/2, 1)",
            Experiment::Expansion => "One-rotation expansion of the coupling term: log-log residual slopes in sigma = 2pi/R",
            Experiment::Moments => "Increment drift/diffusion, fourth-moment ladder of r2 at rotation times, corridor exit",
            Experiment::Decorrelation => "Decay of E[r2(t) V'(theta2(t) - theta0)] at large |r1|",
            Experiment::Exit => "Exit time and side from [2^(-1/beta) R, 2^(1/beta) R]; exit time near the origin",
            Experiment::Excursions => "Return time E exp(-eta) from 2 eps sqrt(T) to eps sqrt(T); excursion counts",
            Experiment::NearZero => "Time spent before |r1| first reaches eps sqrt(T) from the origin",
            Experiment::Martingale => "Martingale-problem defect of |r1|/sqrt(T) under the reflected Brownian generator",
            Experiment::Supr2 => "Tail of sup |r2| over [0, tT] against the maximal-inequality bound",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &FsPath) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Contents of a config file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub experiment: Option<Experiment>,
    pub potential: Option<Potential>,
    pub integrator: Option<Integrator>,
    #[serde(rename = "T")]
    pub big_t: Option<f64>,
    #[serde(rename = "R")]
    pub r_level: Option<f64>,
    pub epsilon: Option<f64>,
    pub beta: Option<f64>,
    pub alpha: Option<f64>,
    pub alpha_t: Option<f64>,
    pub alpha_c: Option<f64>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    #[serde(rename = "D")]
    pub d_margin: Option<f64>,
    pub dt: Option<f64>,
    pub n_paths: Option<usize>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub write_paths: Option<bool>,
}

/// Parses flat `key = value` text. `origin` names the source in diagnostics.
pub fn parse_config_str(text: &str, origin: &str) -> Result<RawConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::Parse { path: origin.to_string(), message: e.to_string().trim_end().to_string() })
}

pub fn read_config(path: &FsPath) -> Result<RawConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_config_str(&text, &path.display().to_string())
}

/// Values given on the command line; they win over the config file.
#[derive(Debug, Clone, Default, PartialEq, Args)]
pub struct Overrides {
    /// Config file (flat key = value)
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Number of trajectories
    #[arg(long = "paths", value_name = "N")]
    pub n_paths: Option<usize>,
    /// Integration step
    #[arg(long, value_name = "F")]
    pub dt: Option<f64>,
    /// Diffusive time scale
    #[arg(long = "T", value_name = "F")]
    pub big_t: Option<f64>,
    /// Level |r1(0)| (largest level for multi-level experiments)
    #[arg(long = "R", value_name = "F")]
    pub r_level: Option<f64>,
    /// Excursion level
    #[arg(long, value_name = "F")]
    pub epsilon: Option<f64>,
    /// Worker threads; does not change results
    #[arg(long, value_name = "N")]
    pub workers: Option<usize>,
    /// Existing directory for summary.json, plotdata.tsv and paths.csv
    #[arg(long = "out", value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
}

/// Fully resolved, validated configuration. Its digest (excluding the output
/// directory) tags every output file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub potential: Potential,
    pub integrator: Integrator,
    #[serde(rename = "T")]
    pub big_t: f64,
    #[serde(rename = "R")]
    pub r_level: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub alpha: f64,
    pub alpha_t: f64,
    pub alpha_c: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    #[serde(rename = "D")]
    pub d_margin: f64,
    /// `None` picks the step from the rotation period at each level.
    pub dt: Option<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub write_paths: bool,
    #[serde(skip)]
    pub output_dir: PathBuf,
}

struct Defaults {
    big_t: f64,
    r_level: f64,
    dt: Option<f64>,
    n_paths: usize,
    d_margin: Option<f64>,
}

fn defaults(e: Experiment) -> Defaults {
    let d = |big_t, r_level, dt, n_paths| Defaults { big_t, r_level, dt, n_paths, d_margin: None };
    match e {
        Experiment::Simulate => d(100.0, 8.0, Some(0.01), 10_000),
        Experiment::Limit | Experiment::Martingale => d(2048.0, 128.0, Some(0.01), 4096),
        Experiment::Expansion => d(2048.0, 512.0, None, 100_000),
        Experiment::Moments => d(2048.0, 256.0, None, 10_000),
        Experiment::Decorrelation => d(2048.0, 256.0, Some(1e-3), 10_000),
        Experiment::Exit => d(2048.0, 128.0, Some(0.01), 1000),
        Experiment::Excursions => d(2048.0, 128.0, Some(0.01), 2000),
        Experiment::NearZero => d(2048.0, 128.0, Some(0.01), 4000),
        Experiment::Supr2 => Defaults { d_margin: Some(6.0), ..d(100.0, 128.0, Some(0.01), 10_000) },
    }
}

impl ExperimentConfig {
    /// Layering, highest priority first: flags, file, `DUET_SEED` (seed
    /// only), per-experiment defaults.
    pub fn resolve(
        experiment: Experiment,
        file: &RawConfig,
        flags: &Overrides,
        env_seed: Option<&str>,
    ) -> Result<Self, CliError> {
        if let Some(e) = file.experiment {
            if e != experiment {
                return Err(CliError::Invalid(format!("config is for experiment {e}, not {experiment}")));
            }
        }
        let env_seed = env_seed
            .map(|s| s.trim().parse::<u64>().map_err(|_| CliError::Invalid(format!("{SEED_ENV}={s:?} is not a u64"))))
            .transpose()?;
        let def = defaults(experiment);
        let base = ScalingParams::default();
        let big_t = flags.big_t.or(file.big_t).unwrap_or(def.big_t);
        let cfg = Self {
            experiment,
            potential: file.potential.unwrap_or(Potential::Cos),
            integrator: file.integrator.unwrap_or(Integrator::Split),
            big_t,
            r_level: flags.r_level.or(file.r_level).unwrap_or(def.r_level),
            epsilon: flags.epsilon.or(file.epsilon).unwrap_or(base.epsilon),
            beta: file.beta.unwrap_or(base.beta),
            alpha: file.alpha.unwrap_or(base.alpha),
            alpha_t: file.alpha_t.unwrap_or(base.alpha_t),
            alpha_c: file.alpha_c.unwrap_or(base.alpha_c),
            alpha1: file.alpha1.unwrap_or(base.alpha1),
            alpha2: file.alpha2.unwrap_or(base.alpha2),
            d_margin: file.d_margin.or(def.d_margin).unwrap_or_else(|| 2.0 * big_t.ln().sqrt()),
            dt: flags.dt.or(file.dt).or(def.dt),
            n_paths: flags.n_paths.or(file.n_paths).unwrap_or(def.n_paths),
            seed: flags.seed.or(file.seed).or(env_seed).unwrap_or(DEFAULT_SEED),
            write_paths: file.write_paths.unwrap_or(experiment == Experiment::Simulate),
            output_dir: flags.output_dir.clone().or_else(|| file.output_dir.clone()).unwrap_or_else(|| PathBuf::from(".")),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn scaling(&self) -> ScalingParams {
        ScalingParams {
            r_level: self.r_level,
            alpha: self.alpha,
            alpha_t: self.alpha_t,
            alpha_c: self.alpha_c,
            beta: self.beta,
            epsilon: self.epsilon,
            big_t: self.big_t,
            d_margin: self.d_margin,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.scaling().validate().map_err(|e| CliError::Invalid(e.0))?;
        if let Some(dt) = self.dt {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(CliError::Invalid(format!("dt must satisfy dt > 0 (got {dt})")));
            }
        }
        if self.n_paths < 2 {
            return Err(CliError::Invalid(format!("n_paths must satisfy n_paths >= 2 (got {})", self.n_paths)));
        }
        match self.experiment {
            Experiment::Expansion if self.r_level < 128.0 => {
                Err(CliError::Invalid(format!("expansion needs R >= 128 so that R/64 >= 2 (got {})", self.r_level)))
            }
            Experiment::Moments if self.r_level < 256.0 => {
                Err(CliError::Invalid(format!("moments needs R >= 256 so that R/4 >= 64 (got {})", self.r_level)))
            }
            Experiment::Decorrelation | Experiment::Exit if self.r_level < 2.0 => {
                Err(CliError::Invalid(format!("R must satisfy R >= 2 (got {})", self.r_level)))
            }
            _ => Ok(()),
        }
    }

    /// Hex SHA-256 of the canonical JSON of every field except the output directory.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    fn step(&self) -> f64 {
        self.dt.unwrap_or(0.01)
    }
}

/// Runs the configured experiment.
pub fn run_experiment(cfg: &ExperimentConfig, exec: &Exec) -> Result<Report, VerifyError> {
    let (pot, integ) = (cfg.potential, cfg.integrator);
    let dt = cfg.step();
    match cfg.experiment {
        Experiment::Simulate => verify::simulate_experiment(
            &SimulateParams {
                potential: pot,
                integrator: integ,
                r1_0: cfg.r_level,
                horizon: cfg.big_t,
                dt,
                n_paths: cfg.n_paths,
                ..Default::default()
            },
            exec,
        ),
        Experiment::Limit | Experiment::Martingale => {
            let p = LimitParams { potential: pot, integrator: integ, big_t: cfg.big_t, dt, n_paths: cfg.n_paths };
            if cfg.experiment == Experiment::Limit {
                verify::limit_experiment(&p, exec)
            } else {
                verify::martingale_experiment(&p, exec)
            }
        }
        Experiment::Expansion => {
            let levels = (0..=6).rev().map(|k| cfg.r_level / f64::from(1u32 << k)).collect();
            verify::expansion_experiment(
                &ExpansionParams { potential: pot, integrator: integ, levels, n_paths: cfg.n_paths, dt: cfg.dt, ..Default::default() },
                exec,
            )
        }
        Experiment::Moments => verify::moments_experiment(
            &MomentsParams {
                potential: pot,
                integrator: integ,
                scaling: cfg.scaling(),
                levels: vec![cfg.r_level / 4.0, cfg.r_level],
                n_paths: cfg.n_paths,
                dt: cfg.dt,
                ladder_level: cfg.r_level / 2.0,
                ..Default::default()
            },
            exec,
        ),
        Experiment::Decorrelation => verify::decorrelation_experiment(
            &DecorrelationParams { potential: pot, integrator: integ, level: cfg.r_level, n_paths: cfg.n_paths, dt, ..Default::default() },
            exec,
        ),
        Experiment::Exit => verify::exit_experiment(
            &ExitParams { potential: pot, integrator: integ, scaling: cfg.scaling(), n_paths: cfg.n_paths, dt, ..Default::default() },
            exec,
        ),
        Experiment::Excursions => verify::excursions_experiment(
            &ExcursionParams {
                potential: pot,
                integrator: integ,
                epsilon: cfg.epsilon,
                big_t: cfg.big_t,
                n_paths: cfg.n_paths,
                dt,
                ..Default::default()
            },
            exec,
        ),
        Experiment::NearZero => verify::near_zero_experiment(
            &NearZeroParams {
                potential: pot,
                integrator: integ,
                epsilon: cfg.epsilon,
                big_t: cfg.big_t,
                alpha2: cfg.alpha2,
                n_paths: cfg.n_paths,
                dt,
            },
            exec,
        ),
        Experiment::Supr2 => verify::supr2_experiment(
            &Supr2Params {
                potential: pot,
                integrator: integ,
                big_t: cfg.big_t,
                d: cfg.d_margin,
                n_paths: cfg.n_paths,
                dt,
                ..Default::default()
            },
            exec,
        ),
    }
}

#[derive(Serialize)]
struct Runtime {
    wall_clock_seconds: f64,
    workers: Option<usize>,
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    #[serde(flatten)]
    summary: &'a EnsembleSummary,
    config: &'a ExperimentConfig,
    runtime: Runtime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub passed: bool,
    pub summary_path: PathBuf,
    pub report: Report,
}

/// Runs the experiment and writes `summary.json`, `plotdata.tsv` and, when a
/// sample path was recorded, `paths.csv` into the output directory, which
/// must already exist.
pub fn run(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<RunOutcome, CliError> {
    let dir = &cfg.output_dir;
    if !dir.is_dir() {
        return Err(CliError::Io {
            path: dir.clone(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
        });
    }
    let digest = cfg.digest();
    let exec = Exec { seed: cfg.seed, workers };
    eprintln!("duet {}: {} paths, seed {}, config {}", cfg.experiment, cfg.n_paths, cfg.seed, &digest[..12]);
    let start = Instant::now();
    let mut report = run_experiment(cfg, &exec)?;
    if cfg.write_paths && report.sample_path.is_none() {
        let horizon = cfg.big_t.min(1e4);
        let dt = cfg.step();
        let stride = ((horizon / dt / 10_000.0).ceil() as usize).max(1);
        let traj = simulate(
            PhaseState::new(cfg.r_level, 0.0, 0.0, 0.0),
            cfg.potential,
            horizon,
            dt,
            &mut NoiseStream::new(cfg.seed, 0),
            stride,
            cfg.integrator,
        )
        .map_err(|e| VerifyError::Path { seed: cfg.seed, index: 0, source: e.into() })?;
        report.sample_path = Some(traj);
    }
    let elapsed = start.elapsed().as_secs_f64();
    for c in &report.checks {
        eprintln!("  {} {} = {:.6}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.value);
    }

    let summary = EnsembleSummary::from_report(&report, cfg.seed, &digest);
    let file = SummaryFile { summary: &summary, config: cfg, runtime: Runtime { wall_clock_seconds: elapsed, workers } };
    let summary_path = dir.join("summary.json");
    let mut json = serde_json::to_string_pretty(&file).expect("summary serializes");
    json.push('\n');
    std::fs::write(&summary_path, json).map_err(io_err(&summary_path))?;

    let plot_path = dir.join("plotdata.tsv");
    let f = File::create(&plot_path).map_err(io_err(&plot_path))?;
    let mut w = BufWriter::new(f);
    verify::write_plot_tsv(&mut w, &digest, &report.plot)
        .and_then(|_| w.flush())
        .map_err(io_err(&plot_path))?;

    if cfg.write_paths {
        if let Some(traj) = &report.sample_path {
            let path = dir.join("paths.csv");
            let f = File::create(&path).map_err(io_err(&path))?;
            let mut w = BufWriter::new(f);
            writeln!(w, "# config_digest={digest}")
                .and_then(|_| traj.write_csv(&mut w))
                .and_then(|_| w.flush())
                .map_err(io_err(&path))?;
        }
    }
    Ok(RunOutcome { passed: summary.passed, summary_path, report })
}

fn after_help() -> String {
    format!(
        "Precedence: flags > --config file > {SEED_ENV} (seed only) > defaults.\n\
         Exit status: 0 all checks passed, 2 a check failed, 1 runtime error."
    )
}

#[derive(Debug, Parser)]
#[command(name = "duet", version, about = "Two-particle Hamiltonian SDE on the circle: simulation and diffusive-limit checks", after_help = after_help())]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    #[command(about = Experiment::Simulate.about())]
    Simulate(Overrides),
    #[command(about = Experiment::Limit.about())]
    Limit(Overrides),
    #[command(about = Experiment::Expansion.about())]
    Expansion(Overrides),
    #[command(about = Experiment::Moments.about())]
    Moments(Overrides),
    #[command(about = Experiment::Decorrelation.about())]
    Decorrelation(Overrides),
    #[command(about = Experiment::Exit.about())]
    Exit(Overrides),
    #[command(about = Experiment::Excursions.about())]
    Excursions(Overrides),
    #[command(name = "near-zero", about = Experiment::NearZero.about())]
    NearZero(Overrides),
    #[command(about = Experiment::Martingale.about())]
    Martingale(Overrides),
    #[command(about = Experiment::Supr2.about())]
    Supr2(Overrides),
}

impl Command {
    pub fn split(&self) -> (Experiment, &Overrides) {
        match self {
            Command::Simulate(o) => (Experiment::Simulate, o),
            Command::Limit(o) => (Experiment::Limit, o),
            Command::Expansion(o) => (Experiment::Expansion, o),
            Command::Moments(o) => (Experiment::Moments, o),
            Command::Decorrelation(o) => (Experiment::Decorrelation, o),
            Command::Exit(o) => (Experiment::Exit, o),
            Command::Excursions(o) => (Experiment::Excursions, o),
            Command::NearZero(o) => (Experiment::NearZero, o),
            Command::Martingale(o) => (Experiment::Martingale, o),
            Command::Supr2(o) => (Experiment::Supr2, o),
        }
    }
}

/// Parses arguments, runs, and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (experiment, flags) = cli.command.split();
    let env_seed = std::env::var(SEED_ENV).ok();
    let result = flags
        .config
        .as_deref()
        .map(read_config)
        .transpose()
        .and_then(|file| ExperimentConfig::resolve(experiment, &file.unwrap_or_default(), flags, env_seed.as_deref()))
        .and_then(|cfg| run(&cfg, flags.workers));
    match result {
        Ok(out) if out.passed => 0,
        Ok(out) => {
            eprintln!("duet {experiment}: checks failed (see {})", out.summary_path.display());
            2
        }
        Err(e) => {
            eprintln!("duet {experiment}: error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    fn resolve(text: &str) -> Result<ExperimentConfig, CliError> {
        let raw = parse_config_str(text, "test.toml")?;
        ExperimentConfig::resolve(Experiment::Limit, &raw, &Overrides::default(), None)
    }

    #[test]
    fn empty_input_gives_defaults() {
        let c = resolve("").unwrap();
        assert_eq!((c.big_t, c.dt, c.n_paths, c.seed), (2048.0, Some(0.01), 4096, DEFAULT_SEED));
        assert_eq!((c.alpha1, c.alpha2, c.beta), (6.0 / 7.0, 5.0 / 9.0, 1.5));
        assert_eq!(c.potential, Potential::Cos);
        assert!(!c.write_paths);
    }

    #[test]
    fn exponent_constraints_are_named() {
        let e = resolve("alpha_c = 0.5").unwrap_err().to_string();
        assert!(e.contains("alpha_c < 1/3"), "{e}");
        let e = resolve("beta = 1").unwrap_err().to_string();
        assert!(e.contains("beta > 1"), "{e}");
        let e = resolve("alpha_c = 0.2").unwrap_err().to_string();
        assert!(e.contains("alpha_t/2 < alpha_c"), "{e}");
    }

    #[test]
    fn parse_errors_carry_location() {
        let e = resolve("T = 2048\nR = oops\n").unwrap_err().to_string();
        assert!(e.contains("test.toml") && e.contains("line 2"), "{e}");
        let e = resolve("colour = 3").unwrap_err().to_string();
        assert!(e.contains("colour"), "{e}");
        let e = resolve("potential = \"sin\"").unwrap_err().to_string();
        assert!(e.contains("sin"), "{e}");
        assert!(resolve("n_paths = 1").is_err());
        assert!(resolve("dt = -0.1").is_err());
        assert!(resolve("experiment = \"exit\"").is_err());
    }

    #[test]
    fn layering_order() {
        let raw = parse_config_str("seed = 5\nT = 100\nepsilon = 0.2\n", "x").unwrap();
        let flags = Overrides { seed: Some(9), big_t: Some(50.0), ..Default::default() };
        let c = ExperimentConfig::resolve(Experiment::NearZero, &raw, &flags, Some("7")).unwrap();
        assert_eq!((c.seed, c.big_t, c.epsilon), (9, 50.0, 0.2));
        let c = ExperimentConfig::resolve(Experiment::NearZero, &raw, &Overrides::default(), Some("7")).unwrap();
        assert_eq!(c.seed, 5);
        let c = ExperimentConfig::resolve(Experiment::NearZero, &RawConfig::default(), &Overrides::default(), Some("7")).unwrap();
        assert_eq!(c.seed, 7);
        assert!(ExperimentConfig::resolve(Experiment::NearZero, &RawConfig::default(), &Overrides::default(), Some("x")).is_err());
    }

    #[test]
    fn digest_ignores_output_dir_only() {
        let a = resolve("").unwrap();
        let b = ExperimentConfig { output_dir: PathBuf::from("/elsewhere"), ..a.clone() };
        let c = ExperimentConfig { seed: a.seed + 1, ..a.clone() };
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn experiment_names_round_trip() {
        for e in Experiment::ALL {
            let raw = parse_config_str(&format!("experiment = \"{}\"", e.name()), "x").unwrap();
            assert_eq!(raw.experiment, Some(e));
        }
    }

    #[test]
    fn help_lists_every_experiment_once() {
        let mut cmd = Cli::command();
        let help = cmd.render_long_help().to_string();
        let subs: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).filter(|s| s != "help").collect();
        assert_eq!(subs.len(), Experiment::ALL.len());
        for e in Experiment::ALL {
            assert!(subs.iter().any(|s| s == e.name()), "{e}");
            assert!(help.contains(e.about()), "{e}");
        }
        Cli::command().debug_assert();
    }
}
