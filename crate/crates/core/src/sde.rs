//! Noise streams and time stepping for the coupled system and for the
//! decoupled `(r, θ)` analogue `dr = -r dt + dW, dθ = r dt`.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::model::{wrap_angle, PhaseState, Potential};

/// Recorded in every summary: bit-reproducibility depends on it.
pub const GAUSSIAN_METHOD: &str = "ziggurat (rand_distr StandardNormal) over xoshiro256++";

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("integration diverged at step {step}")]
    Diverged { step: u64 },
    #[error("time step must be finite and positive, got {0}")]
    BadStep(f64),
    #[error("horizon must be finite and positive, got {0}")]
    BadHorizon(f64),
    #[error("recording stride must be at least 1")]
    BadStride,
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one channel of one trajectory. Pure function of its arguments.
pub fn channel_seed(master_seed: u64, trajectory_index: u64, channel: u64) -> u64 {
    mix64(mix64(mix64(master_seed) ^ trajectory_index) ^ channel.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Increments {
    pub dw1: f64,
    pub dw2: f64,
}

/// Brownian driving noise of one trajectory.
///
/// `W1`, `W2` and an auxiliary channel (initial conditions) each get their
/// own generator, seeded from `(master_seed, trajectory_index, channel)`, so
/// the draws never depend on scheduling or on how many streams exist.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    master_seed: u64,
    trajectory_index: u64,
    cursor: u64,
    w1: Xoshiro256PlusPlus,
    w2: Xoshiro256PlusPlus,
    aux: Xoshiro256PlusPlus,
}

impl NoiseStream {
    pub fn new(master_seed: u64, trajectory_index: u64) -> Self {
        let rng = |c| Xoshiro256PlusPlus::seed_from_u64(channel_seed(master_seed, trajectory_index, c));
        Self {
            master_seed,
            trajectory_index,
            cursor: 0,
            w1: rng(1),
            w2: rng(2),
            aux: rng(3),
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn trajectory_index(&self) -> u64 {
        self.trajectory_index
    }

    /// Number of increment pairs drawn so far.
    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    /// Two independent standard normals, one per channel.
    #[inline]
    pub fn next_standard(&mut self) -> (f64, f64) {
        self.cursor += 1;
        (self.w1.sample(StandardNormal), self.w2.sample(StandardNormal))
    }

    #[inline]
    pub fn next_increments(&mut self, dt: f64) -> Increments {
        let s = dt.sqrt();
        let (a, b) = self.next_standard();
        Increments { dw1: s * a, dw2: s * b }
    }

    /// Generator reserved for initial-condition sampling.
    pub fn aux(&mut self) -> &mut Xoshiro256PlusPlus {
        &mut self.aux
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    #[default]
    Split,
}

impl Integrator {
    pub fn name(self) -> &'static str {
        match self {
            Integrator::Euler => "euler",
            Integrator::Split => "split",
        }
    }
}

impl std::str::FromStr for Integrator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "euler" => Ok(Integrator::Euler),
            "split" => Ok(Integrator::Split),
            other => Err(format!("unknown integrator {other:?} (expected euler or split)")),
        }
    }
}

/// One step of the scheme together with the coupling contribution to `r1`.
#[derive(Debug, Clone, Copy)]
struct Advanced {
    state: PhaseState,
    coupling: f64,
}

#[inline]
fn euler_core(s: &PhaseState, pot: Potential, dt: f64, inc: Increments, friction: bool) -> Advanced {
    let force = pot.d1(s.phase_gap());
    let damping = if friction { s.r2 * dt } else { 0.0 };
    let coupling = -force * dt;
    let state = PhaseState {
        r1: s.r1 + coupling + inc.dw1,
        r2: s.r2 + force * dt - damping + inc.dw2,
        theta1: wrap_angle(s.theta1 + s.r1 * dt),
        theta2: wrap_angle(s.theta2 + s.r2 * dt),
    };
    Advanced { state, coupling }
}

/// Kick / rotate / OU / kick. With `friction == false` the OU substep is the
/// identity and, without noise, the scheme is the leapfrog map of `H`.
#[inline]
fn split_core(s: &PhaseState, pot: Potential, dt: f64, inc: Increments, friction: bool) -> Advanced {
    let half = 0.5 * dt;
    let k1 = pot.d1(s.phase_gap()) * half;
    let mut r1 = s.r1 - k1;
    let mut r2 = s.r2 + k1;
    let theta1 = wrap_angle(s.theta1 + r1 * dt);
    let theta2 = wrap_angle(s.theta2 + r2 * dt);
    if friction {
        let xi = inc.dw2 / dt.sqrt();
        r2 = (-dt).exp() * r2 + (0.5 * (-(-2.0 * dt).exp_m1())).sqrt() * xi;
    } else {
        r2 += inc.dw2;
    }
    r1 += inc.dw1;
    let k2 = pot.d1(theta1 - theta2) * half;
    r1 -= k2;
    r2 += k2;
    Advanced {
        state: PhaseState { r1, r2, theta1, theta2 },
        coupling: -(k1 + k2),
    }
}

fn checked(adv: Advanced, step: u64) -> Result<Advanced, SimError> {
    if adv.state.is_finite() && adv.coupling.is_finite() {
        Ok(adv)
    } else {
        Err(SimError::Diverged { step })
    }
}

/// Explicit Euler–Maruyama step. `dt == 0` returns the state unchanged.
pub fn step_euler(state: &PhaseState, pot: Potential, dt: f64, inc: Increments) -> Result<PhaseState, SimError> {
    if dt == 0.0 {
        return Ok(*state);
    }
    checked(euler_core(state, pot, dt, inc, true), 0).map(|a| a.state)
}

/// Splitting step with the exact Ornstein–Uhlenbeck update for `r2`; the
/// Gaussian for the OU substep is `inc.dw2 / √dt`.
pub fn step_split(state: &PhaseState, pot: Potential, dt: f64, inc: Increments) -> Result<PhaseState, SimError> {
    if dt == 0.0 {
        return Ok(*state);
    }
    checked(split_core(state, pot, dt, inc, true), 0).map(|a| a.state)
}

/// Snapshot of a running simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: PhaseState,
    pub w1: f64,
    pub w2: f64,
    pub z: f64,
}

/// Streaming integrator of the coupled system. Keeps the running Brownian
/// values and the coupling integral `Z(t) = -∫ V'(θ1-θ2) ds`, accumulated from
/// exactly the same terms the scheme adds to `r1`.
#[derive(Debug, Clone)]
pub struct Stepper {
    state: PhaseState,
    pot: Potential,
    integrator: Integrator,
    dt: f64,
    step: u64,
    w1: f64,
    w2: f64,
    z: f64,
}

impl Stepper {
    pub fn new(init: PhaseState, pot: Potential, dt: f64, integrator: Integrator) -> Result<Self, SimError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(SimError::BadStep(dt));
        }
        Ok(Self {
            state: PhaseState::new(init.r1, init.r2, init.theta1, init.theta2),
            pot,
            integrator,
            dt,
            step: 0,
            w1: 0.0,
            w2: 0.0,
            z: 0.0,
        })
    }

    #[inline]
    pub fn advance(&mut self, noise: &mut NoiseStream) -> Result<(), SimError> {
        let inc = noise.next_increments(self.dt);
        let adv = match self.integrator {
            Integrator::Euler => euler_core(&self.state, self.pot, self.dt, inc, true),
            Integrator::Split => split_core(&self.state, self.pot, self.dt, inc, true),
        };
        self.step += 1;
        let adv = checked(adv, self.step)?;
        self.state = adv.state;
        self.z += adv.coupling;
        self.w1 += inc.dw1;
        self.w2 += inc.dw2;
        Ok(())
    }

    #[inline]
    pub fn state(&self) -> &PhaseState {
        &self.state
    }

    #[inline]
    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn sample(&self) -> Sample {
        Sample {
            t: self.time(),
            state: self.state,
            w1: self.w1,
            w2: self.w2,
            z: self.z,
        }
    }
}

/// Number of steps of size `dt` covering `horizon` (tolerant to rounding).
pub fn steps_for(horizon: f64, dt: f64) -> u64 {
    ((horizon / dt) * (1.0 - 1e-12)).ceil().max(0.0) as u64
}

/// Recorded path of the coupled system on the grid `t_i = i · stride · dt`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    /// Spacing of the recorded grid.
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<PhaseState>,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub z: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn push(&mut self, s: Sample) {
        self.times.push(s.t);
        self.states.push(s.state);
        self.w1.push(s.w1);
        self.w2.push(s.w2);
        self.z.push(s.z);
    }

    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn r1(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.r1).collect()
    }

    pub fn r2(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.r2).collect()
    }

    /// Largest violation of `r1(t) = r1(0) + W1(t) + Z(t)`, relative to
    /// `max(1, |r1(t)|)`.
    pub fn decomposition_defect(&self) -> f64 {
        let Some(first) = self.states.first() else { return 0.0 };
        self.states
            .iter()
            .zip(&self.w1)
            .zip(&self.z)
            .map(|((s, w), z)| (s.r1 - (first.r1 + w + z)).abs() / s.r1.abs().max(1.0))
            .fold(0.0, f64::max)
    }

    /// CSV with header `t,r1,r2,theta1,theta2,w1,w2,z`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,r1,r2,theta1,theta2,w1,w2,z")?;
        for i in 0..self.len() {
            let s = &self.states[i];
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.times[i], s.r1, s.r2, s.theta1, s.theta2, self.w1[i], self.w2[i], self.z[i]
            )?;
        }
        Ok(())
    }
}

/// Integrates over `[0, horizon]` and records every `stride`-th grid point
/// (the initial point included).
pub fn simulate(
    init: PhaseState,
    pot: Potential,
    horizon: f64,
    dt: f64,
    noise: &mut NoiseStream,
    stride: usize,
    integrator: Integrator,
) -> Result<Trajectory, SimError> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(SimError::BadHorizon(horizon));
    }
    if stride == 0 {
        return Err(SimError::BadStride);
    }
    let mut stepper = Stepper::new(init, pot, dt, integrator)?;
    let n = steps_for(horizon, dt);
    let mut traj = Trajectory {
        dt: dt * stride as f64,
        ..Default::default()
    };
    let cap = (n as usize) / stride + 1;
    traj.times.reserve(cap);
    traj.states.reserve(cap);
    traj.push(stepper.sample());
    for i in 1..=n {
        stepper.advance(noise)?;
        if i % stride as u64 == 0 {
            traj.push(stepper.sample());
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalogueState {
    pub r: f64,
    pub theta: f64,
}

impl AnalogueState {
    /// Draws from the invariant law: `r ~ N(0, 1/2)`, `θ` uniform.
    pub fn stationary<R: Rng>(rng: &mut R) -> Self {
        let g: f64 = rng.sample(StandardNormal);
        Self {
            r: g * std::f64::consts::FRAC_1_SQRT_2,
            theta: rng.random::<f64>() * std::f64::consts::TAU,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnaloguePath {
    pub dt: f64,
    pub times: Vec<f64>,
    pub r: Vec<f64>,
    pub theta: Vec<f64>,
}

/// One exact-OU step of the decoupled analogue, `θ` advanced with the
/// average of the old and new `r`. `xi` is a standard normal.
#[inline]
pub fn step_analogue(s: AnalogueState, dt: f64, xi: f64) -> AnalogueState {
    let r = (-dt).exp() * s.r + (0.5 * (-(-2.0 * dt).exp_m1())).sqrt() * xi;
    AnalogueState {
        r,
        theta: wrap_angle(s.theta + 0.5 * (s.r + r) * dt),
    }
}

/// Simulates the analogue driven by the `W2` channel of `noise`. With
/// `noiseless` set the OU substep keeps only its mean.
pub fn simulate_analogue(
    init: AnalogueState,
    horizon: f64,
    dt: f64,
    noise: &mut NoiseStream,
    stride: usize,
    noiseless: bool,
) -> Result<AnaloguePath, SimError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(SimError::BadStep(dt));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(SimError::BadHorizon(horizon));
    }
    if stride == 0 {
        return Err(SimError::BadStride);
    }
    let n = steps_for(horizon, dt);
    let mut path = AnaloguePath {
        dt: dt * stride as f64,
        ..Default::default()
    };
    let mut s = AnalogueState {
        r: init.r,
        theta: wrap_angle(init.theta),
    };
    let record = |p: &mut AnaloguePath, i: u64, s: AnalogueState| {
        p.times.push(i as f64 * dt);
        p.r.push(s.r);
        p.theta.push(s.theta);
    };
    record(&mut path, 0, s);
    for i in 1..=n {
        let (_, xi) = noise.next_standard();
        s = step_analogue(s, dt, if noiseless { 0.0 } else { xi });
        if !(s.r.is_finite() && s.theta.is_finite()) {
            return Err(SimError::Diverged { step: i });
        }
        if i % stride as u64 == 0 {
            record(&mut path, i, s);
        }
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::hamiltonian;
    use crate::oracle::ou_moments;
    use std::f64::consts::TAU;

    fn mean_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    }

    #[test]
    fn euler_pure_friction() {
        let s = PhaseState::new(0.0, 2.0, 0.0, 0.0);
        let out = step_euler(&s, Potential::Zero, 0.1, Increments::default()).unwrap();
        assert!((out.r2 - 2.0 * 0.9).abs() < 1e-15);
    }

    #[test]
    fn zero_dt_is_identity() {
        let s = PhaseState::new(1.3, -0.2, 0.4, 5.0);
        let inc = Increments { dw1: 0.3, dw2: -0.1 };
        assert_eq!(step_euler(&s, Potential::Cos, 0.0, inc).unwrap(), s);
        assert_eq!(step_split(&s, Potential::Cos, 0.0, inc).unwrap(), s);
    }

    #[test]
    fn euler_one_coupled_step() {
        let s = PhaseState::new(1.0, 1.0, 0.0, 0.0);
        let out = step_euler(&s, Potential::Cos, 0.1, Increments::default()).unwrap();
        assert!((out.r1 - 1.0).abs() < 1e-15);
        assert!((out.r2 - 0.9).abs() < 1e-15);
        assert!((out.theta1 - 0.1).abs() < 1e-15);
        assert!((out.theta2 - 0.1).abs() < 1e-15);
    }

    #[test]
    fn divergence_is_reported() {
        let s = PhaseState::new(f64::MAX, 0.0, 0.0, 0.0);
        let inc = Increments { dw1: f64::MAX, dw2: 0.0 };
        assert_eq!(step_euler(&s, Potential::Zero, 0.1, inc), Err(SimError::Diverged { step: 0 }));
    }

    #[test]
    fn split_noiseless_decoupled_is_exact() {
        let dt = 0.01;
        let mut s = PhaseState::new(0.7, 3.0, 1.0, 2.0);
        let n = 500;
        for _ in 0..n {
            s = step_split(&s, Potential::Zero, dt, Increments::default()).unwrap();
        }
        let t = n as f64 * dt;
        assert!((s.r2 - 3.0 * (-t).exp()).abs() < 1e-12);
        assert!((s.theta1 - wrap_angle(1.0 + 0.7 * t)).abs() < 1e-11);
    }

    /// Max |H(t) - H(0)| over [0, 100] for the noiseless, friction-free scheme.
    fn energy_drift(core: fn(&PhaseState, Potential, f64, Increments, bool) -> Advanced, dt: f64) -> f64 {
        let pot = Potential::Cos;
        let mut s = PhaseState::new(1.0, 0.3, 0.5, 0.0);
        let h0 = hamiltonian(&s, pot);
        let mut worst = 0.0f64;
        for _ in 0..steps_for(100.0, dt) {
            s = core(&s, pot, dt, Increments::default(), false).state;
            worst = worst.max((hamiltonian(&s, pot) - h0).abs());
        }
        worst
    }

    #[test]
    fn energy_drift_convergence_order() {
        // leapfrog: second order; explicit Euler: first order
        let ratio_split = energy_drift(split_core, 0.02) / energy_drift(split_core, 0.01);
        assert!((3.4..=4.6).contains(&ratio_split), "split ratio {ratio_split}");
        let ratio_euler = energy_drift(euler_core, 0.002) / energy_drift(euler_core, 0.001);
        assert!((1.7..=2.3).contains(&ratio_euler), "euler ratio {ratio_euler}");
    }

    #[test]
    fn decoupled_coupling_integral_is_bit_zero() {
        let mut noise = NoiseStream::new(9, 4);
        let traj = simulate(PhaseState::new(0.5, 1.0, 0.0, 0.0), Potential::Zero, 5.0, 0.01, &mut noise, 7, Integrator::Split)
            .unwrap();
        assert!(traj.z.iter().all(|z| z.to_bits() == 0));
    }

    #[test]
    fn decomposition_identity_holds() {
        for integ in [Integrator::Euler, Integrator::Split] {
            let mut noise = NoiseStream::new(1, 2);
            let traj = simulate(PhaseState::new(2.0, -1.0, 0.3, 0.1), Potential::Mixed, 50.0, 0.01, &mut noise, 10, integ)
                .unwrap();
            assert!(traj.decomposition_defect() <= 1e-10, "{:?}", integ);
            assert_eq!(traj.len(), 501);
            let dts: Vec<f64> = traj.times.windows(2).map(|w| w[1] - w[0]).collect();
            assert!(dts.iter().all(|d| (d - 0.1).abs() < 1e-9));
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let run = || {
            let mut noise = NoiseStream::new(77, 3);
            simulate(PhaseState::new(1.0, 0.0, 0.0, 0.0), Potential::Cos, 2.0, 0.01, &mut noise, 1, Integrator::Split).unwrap()
        };
        let (a, b) = (run(), run());
        assert!(a.states.iter().zip(&b.states).all(|(x, y)| x.r1.to_bits() == y.r1.to_bits()
            && x.theta2.to_bits() == y.theta2.to_bits()));
    }

    #[test]
    fn streams_are_uncorrelated() {
        let n = 1_000_000;
        let mut a = NoiseStream::new(5, 10);
        let mut b = NoiseStream::new(5, 11);
        let (mut sab, mut saa, mut sbb, mut s12) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let (x, x2) = a.next_standard();
            let (y, _) = b.next_standard();
            sab += x * y;
            saa += x * x;
            sbb += y * y;
            s12 += x * x2;
        }
        let bound = 4.0 / (n as f64).sqrt();
        assert!((sab / (saa * sbb).sqrt()).abs() <= bound);
        assert!((s12 / saa).abs() <= bound);
    }

    #[test]
    fn r2_mean_decays() {
        let paths = 10_000;
        let vals: Vec<f64> = (0..paths)
            .map(|i| {
                let mut noise = NoiseStream::new(2024, i);
                let mut st = Stepper::new(PhaseState::new(0.0, 5.0, 0.0, 0.0), Potential::Zero, 0.01, Integrator::Split).unwrap();
                for _ in 0..300 {
                    st.advance(&mut noise).unwrap();
                }
                st.state().r2
            })
            .collect();
        let (m, se) = mean_se(&vals);
        assert!((m - 5.0 * (-3.0f64).exp()).abs() <= 4.0 * se, "{m} ± {se}");
    }

    /// Exact second moment of Euler's r2 recursion from r2(0) = 0 with V ≡ 0:
    /// v_{k+1} = (1-dt)² v_k + dt.
    fn euler_r2_second_moment(dt: f64, steps: usize) -> f64 {
        (0..steps).fold(0.0, |v, _| (1.0 - dt) * (1.0 - dt) * v + dt)
    }

    #[test]
    fn euler_weak_order_one() {
        let exact = ou_moments(0.0, 1.0).1;
        let (c, f) = (euler_r2_second_moment(0.1, 10), euler_r2_second_moment(0.05, 20));
        let ratio_exact = (c - exact).abs() / (f - exact).abs();
        assert!((1.6..=2.4).contains(&ratio_exact));

        // Monte Carlo, coarse path built from the fine increments
        let paths = 200_000u64;
        let (mut sc, mut sf) = (Vec::with_capacity(paths as usize), Vec::with_capacity(paths as usize));
        for i in 0..paths {
            let mut noise = NoiseStream::new(31, i);
            let (mut rc, mut rf) = (PhaseState::origin(), PhaseState::origin());
            for _ in 0..10 {
                let a = noise.next_increments(0.05);
                let b = noise.next_increments(0.05);
                rf = step_euler(&rf, Potential::Zero, 0.05, a).unwrap();
                rf = step_euler(&rf, Potential::Zero, 0.05, b).unwrap();
                let sum = Increments { dw1: a.dw1 + b.dw1, dw2: a.dw2 + b.dw2 };
                rc = step_euler(&rc, Potential::Zero, 0.1, sum).unwrap();
            }
            sc.push(rc.r2 * rc.r2);
            sf.push(rf.r2 * rf.r2);
        }
        let (mc, sec) = mean_se(&sc);
        let (mf, sef) = mean_se(&sf);
        assert!((mc - c).abs() <= 4.0 * sec);
        assert!((mf - f).abs() <= 4.0 * sef);
        let ratio = (mc - exact) / (mf - exact);
        assert!((1.6..=2.4).contains(&ratio), "{ratio}");
    }

    #[test]
    fn split_r2_law_is_step_independent() {
        let (mean, var) = ou_moments(1.0, 1.0);
        let exact = var + mean * mean;
        for dt in [0.25, 0.5] {
            let vals: Vec<f64> = (0..100_000u64)
                .map(|i| {
                    let mut noise = NoiseStream::new(8, i);
                    let mut st = Stepper::new(PhaseState::new(0.0, 1.0, 0.0, 0.0), Potential::Zero, dt, Integrator::Split).unwrap();
                    for _ in 0..steps_for(1.0, dt) {
                        st.advance(&mut noise).unwrap();
                    }
                    st.state().r2.powi(2)
                })
                .collect();
            let (m, se) = mean_se(&vals);
            assert!((m - exact).abs() <= 4.0 * se, "dt={dt}: {m} vs {exact}");
        }
    }

    #[test]
    fn analogue_noiseless_decay() {
        let mut noise = NoiseStream::new(0, 0);
        let p = simulate_analogue(AnalogueState { r: 2.0, theta: 0.0 }, 4.0, 0.01, &mut noise, 1, true).unwrap();
        for (t, r) in p.times.iter().zip(&p.r) {
            assert!((r - 2.0 * (-t).exp()).abs() < 1e-12);
        }
        assert!(p.theta.iter().all(|th| (0.0..TAU).contains(th)));
    }

    #[test]
    fn analogue_moments() {
        let n = 20_000u64;
        let (mut stat, mut shifted) = (Vec::new(), Vec::new());
        for i in 0..n {
            let mut noise = NoiseStream::new(12, i);
            let init = AnalogueState::stationary(noise.aux());
            let p = simulate_analogue(init, 1.0, 0.05, &mut noise, 20, false).unwrap();
            stat.push(p.r.last().unwrap().powi(2));
            let p = simulate_analogue(AnalogueState { r: 2.0, theta: 0.0 }, 1.0, 0.05, &mut noise, 20, false).unwrap();
            shifted.push(*p.r.last().unwrap());
        }
        let (m, se) = mean_se(&stat);
        assert!((m - 0.5).abs() <= 4.0 * se);
        let (m, se) = mean_se(&shifted);
        assert!((m - 2.0 * (-1.0f64).exp()).abs() <= 4.0 * se);
    }

    #[test]
    fn csv_export_header_and_rows() {
        let mut noise = NoiseStream::new(3, 3);
        let traj = simulate(PhaseState::origin(), Potential::Cos, 0.05, 0.01, &mut noise, 1, Integrator::Split).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,r1,r2,theta1,theta2,w1,w2,z");
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 6);
        let parsed: Vec<f64> = rows[3].split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(parsed[1].to_bits(), traj.states[3].r1.to_bits());
    }

    #[test]
    fn invalid_arguments() {
        let mut noise = NoiseStream::new(0, 0);
        assert!(matches!(
            simulate(PhaseState::origin(), Potential::Cos, 1.0, 0.0, &mut noise, 1, Integrator::Split),
            Err(SimError::BadStep(_))
        ));
        assert!(matches!(
            simulate(PhaseState::origin(), Potential::Cos, -1.0, 0.1, &mut noise, 1, Integrator::Split),
            Err(SimError::BadHorizon(_))
        ));
        assert_eq!(
            simulate(PhaseState::origin(), Potential::Cos, 1.0, 0.1, &mut noise, 0, Integrator::Split),
            Err(SimError::BadStride)
        );
    }
}
