//! Simulation and verification toolkit for two interacting particles on the
//! circle: one driven by white noise, the other driven by white noise and
//! damped by friction. The central claim checked here is that
//! `|r1(tT)|/√T` behaves like Brownian motion reflected at the origin as
//! `T` grows.

pub mod model;
pub mod observe;
pub mod oracle;
pub mod sde;
pub mod stats;
pub mod verify;
pub mod cli;

pub use model::{drift, hamiltonian, PhaseState, Potential};
pub use sde::{simulate, simulate_analogue, step_euler, step_split, Integrator, NoiseStream, Trajectory};
