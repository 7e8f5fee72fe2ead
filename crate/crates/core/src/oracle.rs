//! Closed-form reference quantities: OU moments, the half-normal law,
//! exact reflected Brownian paths, and the explicit bound functions used by
//! the estimators.

use crate::sde::NoiseStream;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("{what}: argument {value} outside [{lo}, {hi}]")]
    Domain { what: &'static str, value: f64, lo: f64, hi: f64 },
}

/// Mean and variance of `dr = -r dt + dW` at time `t` from `r(0) = r0`.
pub fn ou_moments(r0: f64, t: f64) -> (f64, f64) {
    (r0 * (-t).exp(), -0.5 * (-2.0 * t).exp_m1())
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Law of `|N(0, t)|`, the fixed-time marginal of reflected Brownian motion
/// started at 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfNormalLaw {
    pub t: f64,
}

impl HalfNormalLaw {
    pub fn new(t: f64) -> Self {
        assert!(t > 0.0, "half-normal variance parameter must be positive");
        Self { t }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            libm::erf(x / (2.0 * self.t).sqrt())
        }
    }
}

pub fn half_normal_cdf(x: f64, t: f64) -> f64 {
    HalfNormalLaw::new(t).cdf(x)
}

/// `|W|` on `t_grid` for a Brownian motion with `W(t_grid[0]) = 0`, sampled
/// exactly from Gaussian increments (W1 channel of `noise`).
pub fn sample_reflected_bm(t_grid: &[f64], noise: &mut NoiseStream) -> Vec<f64> {
    let mut out = Vec::with_capacity(t_grid.len());
    let mut w = 0.0;
    let mut prev = t_grid.first().copied().unwrap_or(0.0);
    for &t in t_grid {
        let (g, _) = noise.next_standard();
        let dt = t - prev;
        if dt > 0.0 {
            w += dt.sqrt() * g;
        }
        prev = t;
        out.push(w.abs());
    }
    out
}

/// `min(1, 18 t T D e^{-(D-1)²})`: bound on the probability that `|r2|`
/// exceeds `|r2(0)| + D` on `[0, tT]`.
pub fn doob_bound(t: f64, big_t: f64, d: f64) -> f64 {
    (18.0 * t * big_t * d * (-(d - 1.0) * (d - 1.0)).exp()).min(1.0)
}

/// `u(x) = -e^{2x}/2 + x + e^{2a}/2 - a`, the solution of `u''/2 - u' = -1`
/// with `u'(0) = u(a) = 0`; an upper bound on the expected exit time of
/// `|r1|` from `[0, a]`.
pub fn exit_ode_u(x: f64, a: f64) -> Result<f64, OracleError> {
    if !(0.0..=a).contains(&x) {
        return Err(OracleError::Domain { what: "exit_ode_u", value: x, lo: 0.0, hi: a });
    }
    Ok(u_raw(x, a))
}

#[inline]
fn u_raw(x: f64, a: f64) -> f64 {
    // grouped so that u(a) is exactly 0
    0.5 * ((2.0 * a).exp() - (2.0 * x).exp()) + (x - a)
}

/// `u'(x) = 1 - e^{2x}`, exactly 0 at the origin.
pub fn exit_ode_du(x: f64) -> f64 {
    -(2.0 * x).exp_m1()
}

/// Finite-difference residual of `u''/2 - u' + 1` at `x` (sixth-order central
/// stencils with step `h`), divided by `1 + |u'| + |u''|/2` so that it stays
/// meaningful where `u` is large.
pub fn exit_ode_residual(x: f64, a: f64, h: f64) -> f64 {
    // the stencil weights sum to zero, so work with u(x + kh) - u(x); this
    // keeps the constant e^{2a}/2 out of the cancellation
    debug_assert!(u_raw(x, a).is_finite());
    let f = |k: f64| -0.5 * (2.0 * x).exp() * (2.0 * k * h).exp_m1() + k * h;
    let (m3, m2, m1, z, p1, p2, p3) = (f(-3.0), f(-2.0), f(-1.0), f(0.0), f(1.0), f(2.0), f(3.0));
    let d1 = (-m3 + 9.0 * m2 - 45.0 * m1 + 45.0 * p1 - 9.0 * p2 + p3) / (60.0 * h);
    let d2 = (2.0 * m3 - 27.0 * m2 + 270.0 * m1 - 490.0 * z + 270.0 * p1 - 27.0 * p2 + 2.0 * p3) / (180.0 * h * h);
    (0.5 * d2 - d1 + 1.0).abs() / (1.0 + d1.abs() + 0.5 * d2.abs())
}

/// `f(x) = ∫_0^x e^{y²} dy`, for which `f(r)` is a martingale when `r` is
/// an OU process. Computed by adaptive Simpson quadrature.
pub fn doob_martingale_f(x: f64) -> Result<f64, OracleError> {
    if !(x.abs() <= 10.0) {
        return Err(OracleError::Domain { what: "doob_martingale_f", value: x, lo: -10.0, hi: 10.0 });
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let g = |y: f64| (y * y).exp();
    let (a, b) = (0.0, x.abs());
    // the integrand is increasing, so b·g(b)/(2b²+1) is a lower bound on the value
    let scale = (b * g(b) / (2.0 * b * b + 1.0)).max(b);
    let v = adaptive_simpson(&g, a, b, 1e-13 * scale, 60);
    Ok(v.copysign(x))
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// First time a Brownian motion started at `x0` reaches `level`, on a grid of
/// step `dt` up to `horizon`. Between grid points the crossing is decided by
/// the exact Brownian-bridge probability `exp(-2(x-L)(y-L)/dt)` (aux channel),
/// so the only error is the `dt` resolution of the reported time. Uses the W1
/// channel for increments.
pub fn sample_bm_hitting_time(x0: f64, level: f64, dt: f64, horizon: f64, noise: &mut NoiseStream) -> Option<f64> {
    use rand::Rng;
    if x0 == level {
        return Some(0.0);
    }
    let side = (x0 - level).signum();
    let sd = dt.sqrt();
    let n = (horizon / dt).round() as u64;
    let mut x = x0;
    for i in 1..=n {
        let (g, _) = noise.next_standard();
        let y = x + sd * g;
        let (dx, dy) = ((x - level) * side, (y - level) * side);
        let u: f64 = noise.aux().random();
        if dy <= 0.0 || u < (-2.0 * dx * dy / dt).exp() {
            return Some(i as f64 * dt);
        }
        x = y;
    }
    None
}

/// Expected exit time of standard BM started at 0 from `[-a, a]`.
pub fn bm_symmetric_exit_time(a: f64) -> f64 {
    a * a
}

/// Probability that BM started at `x` leaves `[lo, hi]` through `lo`.
pub fn bm_lower_exit_probability(x: f64, lo: f64, hi: f64) -> f64 {
    (hi - x) / (hi - lo)
}

/// Expected exit time of BM started at `x` from `[lo, hi]`.
pub fn bm_exit_time(x: f64, lo: f64, hi: f64) -> f64 {
    (x - lo) * (hi - x)
}

/// `P(sup_{s<=t} |W_s| >= c)` for standard BM from 0, by the eigenfunction
/// series of the heat equation on `[-c, c]`.
pub fn bm_two_sided_exit_probability(c: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    // small t: the series converges slowly, use the image sum for the survival instead
    if t < 0.5 * c * c {
        let mut p = 0.0;
        for k in 0..50i32 {
            let m = (2 * k + 1) as f64;
            let term = 2.0 * (1.0 - norm_cdf(m * c / t.sqrt()));
            p += if k % 2 == 0 { 2.0 * term } else { -2.0 * term };
            if term < 1e-18 {
                break;
            }
        }
        return p.clamp(0.0, 1.0);
    }
    let mut survive = 0.0;
    for k in 0..200i32 {
        let m = (2 * k + 1) as f64;
        let term = (4.0 / std::f64::consts::PI) / m * (-m * m * std::f64::consts::PI.powi(2) * t / (8.0 * c * c)).exp();
        survive += if k % 2 == 0 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (1.0 - survive).clamp(0.0, 1.0)
}

/// `E e^{-λ τ}` for BM hitting a level at distance `d`.
pub fn bm_hitting_laplace(d: f64, lambda: f64) -> f64 {
    (-(2.0 * lambda).sqrt() * d.abs()).exp()
}
