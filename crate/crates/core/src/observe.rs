//! Derived processes and random times read off recorded paths: the
//! diffusively scaled momentum, rotation times, level hitting times,
//! excursion ladders and running suprema.
//!
//! Continuous-time stopping times are realised on the recording grid: a
//! crossing is the first grid interval whose endpoints straddle the level,
//! and its time is linearly interpolated inside that interval.

use std::f64::consts::TAU;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::sde::Trajectory;

/// Time for `θ1` to complete one revolution of the circle at speed 1.
pub const FULL_TURN: f64 = TAU;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ObserveError {
    #[error("trajectory horizon {have} is shorter than the required {need}")]
    HorizonTooShort { have: f64, need: f64 },
    #[error("grid spacing {dt} too coarse: need at most {max}")]
    GridTooCoarse { dt: f64, max: f64 },
    #[error("rotation schedule needs |r1(0)| >= 1, got {0}")]
    LevelTooSmall(f64),
    #[error("empty path")]
    EmptyPath,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct ParamError(pub String);

/// Exponent and level bookkeeping for the large-`R` and large-`T` estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    /// Initial level `R = |r1(0)|`.
    pub r_level: f64,
    /// `|r2(0)| <= R^alpha`.
    pub alpha: f64,
    /// `t(R) = R^alpha_t`.
    pub alpha_t: f64,
    /// `c(R) = R^alpha_c`, half-width of the corridor around `r1(0)`.
    pub alpha_c: f64,
    /// Exit interval `|r1|^beta ∈ [R^beta/2, 2R^beta]`.
    pub beta: f64,
    /// Excursion level.
    pub epsilon: f64,
    /// Diffusive time scale.
    pub big_t: f64,
    /// Margin in the sup bound for `|r2|`.
    pub d_margin: f64,
    /// Near-origin level `(log T)^alpha1`.
    pub alpha1: f64,
    /// `r2` cap `(log T)^alpha2`.
    pub alpha2: f64,
}

impl Default for ScalingParams {
    fn default() -> Self {
        let big_t: f64 = 2048.0;
        Self {
            r_level: 128.0,
            alpha: 0.3,
            alpha_t: 0.5,
            alpha_c: 0.3,
            beta: 1.5,
            epsilon: 0.1,
            big_t,
            d_margin: 2.0 * big_t.ln().sqrt(),
            alpha1: 6.0 / 7.0,
            alpha2: 5.0 / 9.0,
        }
    }
}

impl ScalingParams {
    pub fn with_level(mut self, r: f64) -> Self {
        self.r_level = r;
        self
    }

    /// `c(R) = R^alpha_c`
    pub fn corridor(&self) -> f64 {
        self.r_level.powf(self.alpha_c)
    }

    /// `t(R) = R^alpha_t`
    pub fn horizon(&self) -> f64 {
        self.r_level.powf(self.alpha_t)
    }

    /// `R^alpha`
    pub fn r2_cap(&self) -> f64 {
        self.r_level.powf(self.alpha)
    }

    /// `(log T)^alpha1`
    pub fn near_origin_level(&self) -> f64 {
        self.big_t.ln().powf(self.alpha1)
    }

    /// `(log T)^alpha2`
    pub fn zeta_cap(&self) -> f64 {
        self.big_t.ln().powf(self.alpha2)
    }

    /// Checks every constraint, naming the first violated inequality.
    pub fn validate(&self) -> Result<(), ParamError> {
        let positive = [
            ("R", self.r_level),
            ("epsilon", self.epsilon),
            ("T", self.big_t),
            ("D", self.d_margin),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ParamError(format!("{name} must satisfy {name} > 0 (got {v})")));
            }
        }
        let checks: [(bool, &str); 8] = [
            (self.alpha > 0.0, "alpha > 0"),
            (self.alpha < self.alpha_t, "alpha < alpha_t"),
            (self.alpha_t < 2.0 / 3.0, "alpha_t < 2/3"),
            (self.alpha_t / 2.0 < self.alpha_c, "alpha_t/2 < alpha_c"),
            (self.alpha_c < 1.0 / 3.0, "alpha_c < 1/3"),
            (self.beta > 1.0, "beta > 1"),
            (self.alpha1 > 0.0 && self.alpha1 < 1.0, "0 < alpha1 < 1"),
            (self.alpha2 > 0.0 && self.alpha2 < self.alpha1, "0 < alpha2 < alpha1"),
        ];
        for (ok, rule) in checks {
            if !ok {
                let detail = match rule {
                    "alpha_t/2 < alpha_c" | "alpha_c < 1/3" => {
                        format!("alpha_c must satisfy alpha_t/2 < alpha_c < 1/3 (violated: {rule}; alpha_t = {}, alpha_c = {})", self.alpha_t, self.alpha_c)
                    }
                    "alpha > 0" | "alpha < alpha_t" | "alpha_t < 2/3" => {
                        format!("exponents must satisfy 0 < alpha < alpha_t < 2/3 (violated: {rule}; alpha = {}, alpha_t = {})", self.alpha, self.alpha_t)
                    }
                    "beta > 1" => format!("beta must satisfy beta > 1 (got {})", self.beta),
                    _ => format!("constraint violated: {rule}"),
                };
                return Err(ParamError(detail));
            }
        }
        Ok(())
    }
}

/// A real-valued path on an increasing time grid.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Path {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Path {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(times.len(), values.len(), "times and values differ in length");
        Self { times, values }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn abs(&self) -> Path {
        Path::new(self.times.clone(), self.values.iter().map(|v| v.abs()).collect())
    }

    /// Value at the grid point nearest to `t`, ties to the earlier point.
    pub fn nearest(&self, t: f64) -> f64 {
        let i = self.times.partition_point(|&s| s < t);
        if i == 0 {
            return self.values[0];
        }
        if i == self.len() {
            return self.values[i - 1];
        }
        if t - self.times[i - 1] <= self.times[i] - t {
            self.values[i - 1]
        } else {
            self.values[i]
        }
    }
}

pub fn r1_path(traj: &Trajectory) -> Path {
    Path::new(traj.times.clone(), traj.r1())
}

pub fn r2_path(traj: &Trajectory) -> Path {
    Path::new(traj.times.clone(), traj.r2())
}

/// `X_t = r1(tT)/√T` for `t ∈ [0, t_max]`, on the trajectory's grid divided by `T`.
pub fn scaled_process(traj: &Trajectory, big_t: f64, t_max: f64) -> Result<Path, ObserveError> {
    scale_path(&r1_path(traj), big_t, t_max)
}

/// Diffusive rescaling of an arbitrary path.
pub fn scale_path(path: &Path, big_t: f64, t_max: f64) -> Result<Path, ObserveError> {
    let need = t_max * big_t;
    let have = path.times.last().copied().unwrap_or(0.0);
    if have < need * (1.0 - 1e-12) {
        return Err(ObserveError::HorizonTooShort { have, need });
    }
    let root = big_t.sqrt();
    let (times, values) = path
        .times
        .iter()
        .zip(&path.values)
        .take_while(|(t, _)| **t <= need * (1.0 + 1e-12))
        .map(|(t, v)| (t / big_t, v / root))
        .unzip();
    Ok(Path { times, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationSchedule {
    pub sigma: Vec<f64>,
    pub tau_c: Option<f64>,
    pub n_tilde: usize,
}

/// Rotation times `σ_{k+1} = σ_k + 2π/|r1(σ_k)|` while `σ_k < t(R) ∧ τ_c`,
/// with `τ_c` the first time `|r1 - r1(0)| >= c(R)`. `R` is read from the
/// trajectory as `|r1(0)|`.
pub fn rotation_schedule(traj: &Trajectory, params: &ScalingParams) -> Result<RotationSchedule, ObserveError> {
    let path = r1_path(traj);
    if path.is_empty() {
        return Err(ObserveError::EmptyPath);
    }
    let r0 = path.values[0];
    let level = r0.abs();
    if !(level >= 1.0) {
        return Err(ObserveError::LevelTooSmall(level));
    }
    let p = params.with_level(level);
    let c = p.corridor();
    let max_dt = 1.0 / (10.0 * (level + 2.0 * c));
    if traj.dt > max_dt * (1.0 + 1e-12) {
        return Err(ObserveError::GridTooCoarse { dt: traj.dt, max: max_dt });
    }
    let t_r = p.horizon();
    let tau_c = path
        .times
        .iter()
        .zip(&path.values)
        .find(|(_, v)| (**v - r0).abs() >= c)
        .map(|(t, _)| *t);
    let stop = tau_c.map_or(t_r, |tc| tc.min(t_r));
    let have = traj.horizon();
    if tau_c.is_none() && have < t_r * (1.0 - 1e-12) {
        return Err(ObserveError::HorizonTooShort { have, need: t_r });
    }
    let mut sigma = vec![0.0];
    let mut s = 0.0;
    while s < stop {
        s += FULL_TURN / path.nearest(s).abs();
        sigma.push(s);
    }
    let n_tilde = sigma.len() - 1;
    Ok(RotationSchedule { sigma, tau_c, n_tilde })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HitMode {
    /// Crossing of `|path|`.
    Absolute,
    /// Crossing of the path itself.
    Signed,
}

/// First time the path (or its absolute value) reaches `level`, linearly
/// interpolated inside the bracketing grid step.
pub fn hitting_time(path: &Path, level: f64, mode: HitMode) -> Option<f64> {
    hitting_time_from(path, level, mode, 0)
}

fn hitting_time_from(path: &Path, level: f64, mode: HitMode, start: usize) -> Option<f64> {
    let f = |v: f64| match mode {
        HitMode::Absolute => v.abs(),
        HitMode::Signed => v,
    };
    let vals = &path.values;
    let times = &path.times;
    if start >= vals.len() {
        return None;
    }
    let mut prev = f(vals[start]) - level;
    if prev == 0.0 {
        return Some(times[start]);
    }
    for i in start + 1..vals.len() {
        let cur = f(vals[i]) - level;
        if cur == 0.0 || (cur > 0.0) != (prev > 0.0) {
            let w = prev / (prev - cur);
            return Some(times[i - 1] + w * (times[i] - times[i - 1]));
        }
        prev = cur;
    }
    None
}

/// First crossing of `level` by `|path|` on the polyline that starts at the
/// point `(t0, v0)` and continues through grid points `start..`. Returns the
/// time and the index to resume scanning from.
fn crossing_after(path: &Path, level: f64, t0: f64, v0: f64, start: usize) -> Option<(f64, usize)> {
    let (mut tp, mut prev) = (t0, v0 - level);
    for i in start..path.len() {
        let cur = path.values[i].abs() - level;
        if cur == 0.0 {
            return Some((path.times[i], i + 1));
        }
        if (cur > 0.0) != (prev > 0.0) {
            let w = prev / (prev - cur);
            return Some((tp + w * (path.times[i] - tp), i));
        }
        (tp, prev) = (path.times[i], cur);
    }
    None
}

/// Interlaced crossing times of `|X|`: `eta` are arrivals at `ε`, `sigma_up`
/// the following arrivals at `2ε`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExcursionRecord {
    pub epsilon: f64,
    pub eta: Vec<f64>,
    pub sigma_up: Vec<f64>,
    /// First (diffusive) time `|r2(sT)|` reaches the cap.
    pub zeta: Option<f64>,
    /// `(level, first hitting time of |X|)` for the levels `ε` and `2ε`.
    pub tau_level: Vec<(f64, Option<f64>)>,
    /// Excursions started before `ζ` that did not reach `ε` again before
    /// `ζ` or the end of the path.
    pub censored: usize,
}

impl ExcursionRecord {
    /// Completed `2ε → ε` excursions.
    pub fn complete(&self) -> usize {
        self.eta.iter().filter(|&&e| self.sigma_up.first().is_some_and(|&s| e >= s)).count()
    }

    /// `η_0 ≤ σ_1 ≤ η_1 ≤ σ_2 ≤ …`
    pub fn is_interlaced(&self) -> bool {
        let mut merged = Vec::with_capacity(self.eta.len() + self.sigma_up.len());
        for (i, e) in self.eta.iter().enumerate() {
            merged.push(*e);
            if let Some(s) = self.sigma_up.get(i) {
                merged.push(*s);
            }
        }
        self.sigma_up.len() <= self.eta.len()
            && self.eta.len() <= self.sigma_up.len() + 1
            && merged.windows(2).all(|w| w[0] <= w[1])
    }

    pub fn events(&self, trajectory_index: u64) -> Vec<EventRow> {
        let mut rows = Vec::new();
        for (k, t) in self.eta.iter().enumerate() {
            rows.push(EventRow { trajectory_index, kind: "eta", k, time: *t, level: self.epsilon });
        }
        for (k, t) in self.sigma_up.iter().enumerate() {
            rows.push(EventRow { trajectory_index, kind: "sigma", k: k + 1, time: *t, level: 2.0 * self.epsilon });
        }
        if let Some(z) = self.zeta {
            rows.push(EventRow { trajectory_index, kind: "zeta", k: 0, time: z, level: f64::NAN });
        }
        for (k, (level, t)) in self.tau_level.iter().enumerate() {
            if let Some(t) = t {
                rows.push(EventRow { trajectory_index, kind: "tau", k, time: *t, level: *level });
            }
        }
        rows
    }
}

/// Builds the excursion ladder of `|X|` between `ε` and `2ε`. `r2` is given
/// in physical time and is used for the cap time `ζ` (reported in diffusive
/// units); crossings after `ζ` are not recorded.
pub fn excursions(xpath: &Path, epsilon: f64, r2: Option<&Path>, r2_cap: f64, big_t: f64) -> ExcursionRecord {
    let zeta = r2.and_then(|p| hitting_time(p, r2_cap, HitMode::Absolute)).map(|t| t / big_t);
    let end = zeta.unwrap_or(f64::INFINITY);
    let mut rec = ExcursionRecord {
        epsilon,
        zeta,
        tau_level: vec![
            (epsilon, hitting_time(xpath, epsilon, HitMode::Absolute)),
            (2.0 * epsilon, hitting_time(xpath, 2.0 * epsilon, HitMode::Absolute)),
        ],
        ..Default::default()
    };
    if xpath.is_empty() {
        return rec;
    }
    let (mut t0, mut v0) = (xpath.times[0], xpath.values[0].abs());
    let mut next = 1usize;
    let mut seeking_down = true;
    if v0 <= epsilon {
        rec.eta.push(t0);
        seeking_down = false;
    }
    loop {
        let level = if seeking_down { epsilon } else { 2.0 * epsilon };
        let Some((t, idx)) = crossing_after(xpath, level, t0, v0, next) else { break };
        if t > end {
            break;
        }
        if seeking_down {
            rec.eta.push(t);
        } else {
            rec.sigma_up.push(t);
        }
        seeking_down = !seeking_down;
        (t0, v0, next) = (t, level, idx);
    }
    // an excursion still open when ζ arrives is dropped from the count
    if rec.zeta.is_some() && rec.eta.len() > rec.sigma_up.len() && !rec.sigma_up.is_empty() {
        rec.censored = 1;
    }
    rec
}

/// `max |path|` over `[0, h]`, exact on the grid.
pub fn running_sup(path: &Path, h: f64) -> f64 {
    path.times
        .iter()
        .zip(&path.values)
        .take_while(|(t, _)| **t <= h)
        .map(|(_, v)| v.abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRow {
    pub trajectory_index: u64,
    pub kind: &'static str,
    pub k: usize,
    pub time: f64,
    pub level: f64,
}

/// CSV with header `trajectory_index,kind,k,time,level`.
pub fn write_event_table<W: Write>(mut out: W, rows: &[EventRow]) -> io::Result<()> {
    writeln!(out, "trajectory_index,kind,k,time,level")?;
    for r in rows {
        writeln!(out, "{},{},{},{:.16e},{:.16e}", r.trajectory_index, r.kind, r.k, r.time, r.level)?;
    }
    Ok(())
}
