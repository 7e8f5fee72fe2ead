//! Python bindings for the `duet` simulation library.

use std::collections::HashMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use duet::cli::{parse_config_str, run_experiment as run_cfg, Experiment, ExperimentConfig, Overrides};
use duet::model::{self, Potential};
use duet::oracle;
use duet::sde::{self, Integrator, NoiseStream};
use duet::stats;
use duet::verify::{EnsembleSummary, Exec};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn potential(name: &str) -> PyResult<Potential> {
    name.parse().map_err(value_err)
}

/// Phase-space point `(r1, r2, theta1, theta2)`; angles are wrapped to `[-pi, pi)`.
#[pyclass(module = "duet_py", frozen, from_py_object)]
#[derive(Clone, Copy)]
pub struct PhaseState {
    inner: model::PhaseState,
}

#[pymethods]
impl PhaseState {
    #[new]
    #[pyo3(signature = (r1=0.0, r2=0.0, theta1=0.0, theta2=0.0))]
    fn new(r1: f64, r2: f64, theta1: f64, theta2: f64) -> Self {
        Self { inner: model::PhaseState::new(r1, r2, theta1, theta2) }
    }

    #[getter]
    fn r1(&self) -> f64 {
        self.inner.r1
    }
    #[getter]
    fn r2(&self) -> f64 {
        self.inner.r2
    }
    #[getter]
    fn theta1(&self) -> f64 {
        self.inner.theta1
    }
    #[getter]
    fn theta2(&self) -> f64 {
        self.inner.theta2
    }

    #[pyo3(signature = (potential="cos"))]
    fn hamiltonian(&self, potential: &str) -> PyResult<f64> {
        Ok(model::hamiltonian(&self.inner, self::potential(potential)?))
    }

    /// `(dr1, dr2, dtheta1, dtheta2)` without the noise terms.
    #[pyo3(signature = (potential="cos"))]
    fn drift(&self, potential: &str) -> PyResult<(f64, f64, f64, f64)> {
        let d = model::drift(&self.inner, self::potential(potential)?);
        Ok((d.dr1, d.dr2, d.dtheta1, d.dtheta2))
    }

    fn __repr__(&self) -> String {
        let s = self.inner;
        format!("PhaseState(r1={}, r2={}, theta1={}, theta2={})", s.r1, s.r2, s.theta1, s.theta2)
    }
}

/// Recorded trajectory; columns are exposed as lists.
#[pyclass(module = "duet_py", frozen)]
pub struct Trajectory {
    inner: sde::Trajectory,
}

#[pymethods]
impl Trajectory {
    fn __len__(&self) -> usize {
        self.inner.len()
    }
    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }
    #[getter]
    fn r1(&self) -> Vec<f64> {
        self.inner.r1()
    }
    #[getter]
    fn r2(&self) -> Vec<f64> {
        self.inner.r2()
    }
    #[getter]
    fn theta1(&self) -> Vec<f64> {
        self.inner.states.iter().map(|s| s.theta1).collect()
    }
    #[getter]
    fn theta2(&self) -> Vec<f64> {
        self.inner.states.iter().map(|s| s.theta2).collect()
    }
    #[getter]
    fn w1(&self) -> Vec<f64> {
        self.inner.w1.clone()
    }
    #[getter]
    fn w2(&self) -> Vec<f64> {
        self.inner.w2.clone()
    }
    #[getter]
    fn z(&self) -> Vec<f64> {
        self.inner.z.clone()
    }

    /// `max |r1(t) - r1(0) - W1(t) - Z(t)|` over the recorded points.
    fn decomposition_defect(&self) -> f64 {
        self.inner.decomposition_defect()
    }

    fn columns(&self) -> HashMap<&'static str, Vec<f64>> {
        HashMap::from([
            ("t", self.times()),
            ("r1", self.r1()),
            ("r2", self.r2()),
            ("theta1", self.theta1()),
            ("theta2", self.theta2()),
            ("w1", self.w1()),
            ("w2", self.w2()),
            ("z", self.z()),
        ])
    }
}

/// Integrates one path. `(seed, index)` selects the noise stream.
#[pyfunction]
#[pyo3(signature = (init, horizon, dt, seed=0, index=0, potential="cos", stride=1, integrator="split"))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    init: PhaseState,
    horizon: f64,
    dt: f64,
    seed: u64,
    index: u64,
    potential: &str,
    stride: usize,
    integrator: &str,
) -> PyResult<Trajectory> {
    let integ: Integrator = integrator.parse().map_err(value_err)?;
    let mut noise = NoiseStream::new(seed, index);
    let inner = sde::simulate(init.inner, self::potential(potential)?, horizon, dt, &mut noise, stride, integ).map_err(value_err)?;
    Ok(Trajectory { inner })
}

/// Runs an experiment and returns its summary as a JSON string. `config` is
/// flat `key = value` text; unspecified keys take the experiment defaults.
#[pyfunction]
#[pyo3(signature = (experiment, config="", workers=None))]
fn run_experiment(py: Python<'_>, experiment: &str, config: &str, workers: Option<usize>) -> PyResult<String> {
    let exp = Experiment::ALL
        .into_iter()
        .find(|e| e.name() == experiment)
        .ok_or_else(|| value_err(format!("unknown experiment {experiment:?}")))?;
    let raw = parse_config_str(config, "<config>").map_err(value_err)?;
    let cfg = ExperimentConfig::resolve(exp, &raw, &Overrides::default(), None).map_err(value_err)?;
    let exec = Exec { seed: cfg.seed, workers };
    let report = py.detach(|| run_cfg(&cfg, &exec)).map_err(value_err)?;
    let summary = EnsembleSummary::from_report(&report, cfg.seed, &cfg.digest());
    serde_json::to_string(&summary).map_err(value_err)
}

#[pyfunction]
fn ou_moments(r0: f64, t: f64) -> (f64, f64) {
    oracle::ou_moments(r0, t)
}

#[pyfunction]
fn half_normal_cdf(x: f64, t: f64) -> f64 {
    oracle::half_normal_cdf(x, t)
}

#[pyfunction]
fn doob_bound(t: f64, big_t: f64, d: f64) -> f64 {
    oracle::doob_bound(t, big_t, d)
}

#[pyfunction]
fn exit_ode_u(x: f64, a: f64) -> PyResult<f64> {
    oracle::exit_ode_u(x, a).map_err(value_err)
}

/// Two-sided KS distance of `samples` against the half-normal law of `|B_t|`.
#[pyfunction]
fn ks_half_normal(samples: Vec<f64>, t: f64) -> PyResult<f64> {
    if samples.is_empty() {
        return Err(value_err("need at least one sample"));
    }
    Ok(stats::ks_statistic(&samples, |x| oracle::half_normal_cdf(x, t)))
}

#[pymodule]
fn duet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PhaseState>()?;
    m.add_class::<Trajectory>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(ou_moments, m)?)?;
    m.add_function(wrap_pyfunction!(half_normal_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(doob_bound, m)?)?;
    m.add_function(wrap_pyfunction!(exit_ode_u, m)?)?;
    m.add_function(wrap_pyfunction!(ks_half_normal, m)?)?;
    m.add("EXPERIMENTS", Experiment::ALL.iter().map(|e| e.name()).collect::<Vec<_>>())?;
    Ok(())
}
