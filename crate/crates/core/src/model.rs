//! State space, coupling potential and drift field of the two-particle system
//!
//! ```text
//! dr1 = -V'(θ1 - θ2) dt + dW1
//! dr2 =  V'(θ1 - θ2) dt + dW2 - r2 dt
//! dθ1 = r1 dt
//! dθ2 = r2 dt
//! ```
//!
//! The friction coefficient on `r2` is fixed at 1. Angles live on the circle
//! of circumference 2π and are stored in `[0, 2π)`.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Reduce an angle into `[0, 2π)`.
#[inline]
pub fn wrap_angle(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    // rem_euclid of a tiny negative number rounds up to exactly TAU
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Shortest distance from `x` to 0 on the circle.
#[inline]
pub fn circle_abs(x: f64) -> f64 {
    let r = wrap_angle(x);
    r.min(TAU - r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub r1: f64,
    pub r2: f64,
    pub theta1: f64,
    pub theta2: f64,
}

impl PhaseState {
    /// Builds a state with both angles wrapped into `[0, 2π)`.
    pub fn new(r1: f64, r2: f64, theta1: f64, theta2: f64) -> Self {
        Self {
            r1,
            r2,
            theta1: wrap_angle(theta1),
            theta2: wrap_angle(theta2),
        }
    }

    pub fn origin() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.r1.is_finite() && self.r2.is_finite() && self.theta1.is_finite() && self.theta2.is_finite()
    }

    /// Relative angle `θ1 - θ2`, unwrapped.
    #[inline]
    pub fn phase_gap(&self) -> f64 {
        self.theta1 - self.theta2
    }
}

/// Time derivative of the deterministic part of the system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateRate {
    pub dr1: f64,
    pub dr2: f64,
    pub dtheta1: f64,
    pub dtheta2: f64,
}

/// Built-in 2π-periodic coupling potentials. All of them satisfy
/// `|V|, |V'|, |V''| <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Potential {
    /// `V(x) = cos x`
    #[default]
    Cos,
    /// `V ≡ 0`: the particles decouple.
    Zero,
    /// `V(x) = cos(x)/2 + sin(2x)/8`, which has no reflection symmetry.
    Mixed,
}

impl Potential {
    pub const ALL: [Potential; 3] = [Potential::Cos, Potential::Zero, Potential::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            Potential::Cos => "cos",
            Potential::Zero => "zero",
            Potential::Mixed => "mixed",
        }
    }

    #[inline]
    pub fn value(self, x: f64) -> f64 {
        match self {
            Potential::Cos => x.cos(),
            Potential::Zero => 0.0,
            Potential::Mixed => 0.5 * x.cos() + 0.125 * (2.0 * x).sin(),
        }
    }

    /// `V'(x)`
    #[inline]
    pub fn d1(self, x: f64) -> f64 {
        match self {
            Potential::Cos => -x.sin(),
            Potential::Zero => 0.0,
            Potential::Mixed => -0.5 * x.sin() + 0.25 * (2.0 * x).cos(),
        }
    }

    /// `V''(x)`
    #[inline]
    pub fn d2(self, x: f64) -> f64 {
        match self {
            Potential::Cos => -x.cos(),
            Potential::Zero => 0.0,
            Potential::Mixed => -0.5 * x.cos() - 0.5 * (2.0 * x).sin(),
        }
    }

    pub fn is_zero(self) -> bool {
        self == Potential::Zero
    }
}

impl fmt::Display for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown potential {0:?} (expected one of: cos, zero, mixed)")]
pub struct UnknownPotential(pub String);

impl FromStr for Potential {
    type Err = UnknownPotential;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "cos" => Ok(Potential::Cos),
            "zero" => Ok(Potential::Zero),
            "mixed" => Ok(Potential::Mixed),
            other => Err(UnknownPotential(other.to_string())),
        }
    }
}

/// Deterministic drift `(-V'(θ1-θ2), V'(θ1-θ2) - r2, r1, r2)`.
#[inline]
pub fn drift(state: &PhaseState, pot: Potential) -> StateRate {
    let force = pot.d1(state.phase_gap());
    StateRate {
        dr1: -force,
        dr2: force - state.r2,
        dtheta1: state.r1,
        dtheta2: state.r2,
    }
}

/// `H = (r1² + r2²)/2 + V(θ1 - θ2)`
#[inline]
pub fn hamiltonian(state: &PhaseState, pot: Potential) -> f64 {
    0.5 * (state.r1 * state.r1 + state.r2 * state.r2) + pot.value(state.phase_gap())
}
