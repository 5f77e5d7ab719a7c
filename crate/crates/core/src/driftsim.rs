//! The RMS-drift process and its one-dimensional Hamiltonian limit.
//!
//! A drift state `(h, u, φ)` advances by the two-step transition
//!
//! ```text
//! h' = (1 − 2ηu)·h
//! u' = u + 4ηh²K² − 2ηC_b,      K² = 2C_b + ‖∇_Γ log λ₁(φ)‖²
//! φ' = φ − 2η²h²·∇_Γ log λ₁(φ)
//! ```
//!
//! with energy `E = u²/2 + K²h² + C_b·log(1/|h|)`. In the variables
//! `x = log|h|`, `v = −u` and time `s = 2η·(transitions)` this is the
//! Hamiltonian system `ẍ = −U'(x)` with `U(x) = K²e^{2x} − C_b·x`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::exec::Exec;
use crate::linalg::Vector;
use crate::manifold::SharpnessField;

#[derive(Debug, Clone, PartialEq)]
pub struct DriftState {
    pub h: f64,
    pub u: f64,
    /// `‖∇_Γ log λ₁(φ)‖²`, frozen when no manifold point is attached.
    pub grad_norm_sq: f64,
    pub phi: Option<Vector>,
}

impl DriftState {
    pub fn frozen(h: f64, u: f64, grad_norm_sq: f64) -> Self {
        Self { h, u, grad_norm_sq, phi: None }
    }

    /// `K² = 2C_b + ‖∇_Γ log λ₁‖²`.
    pub fn k2(&self, c_b: f64) -> f64 {
        2.0 * c_b + self.grad_norm_sq
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianParams {
    pub k: f64,
    pub c_b: f64,
}

impl HamiltonianParams {
    /// Parameters for `‖∇_Γ log λ₁‖² = grad_norm_sq`.
    pub fn new(c_b: f64, grad_norm_sq: f64) -> Result<Self> {
        if !(c_b > 0.0) || !(grad_norm_sq >= 0.0) {
            return Err(Error::InvalidHyperparameters(format!(
                "need C_b > 0 and ‖∇‖² ≥ 0, got C_b = {c_b}, ‖∇‖² = {grad_norm_sq}"
            )));
        }
        Ok(Self { k: (2.0 * c_b + grad_norm_sq).sqrt(), c_b })
    }

    pub fn k2(&self) -> f64 {
        self.k * self.k
    }

    /// `U(x) = K²e^{2x} − C_b·x`.
    pub fn potential(&self, x: f64) -> f64 {
        self.k2() * (2.0 * x).exp() - self.c_b * x
    }

    /// `U'(x) = 2K²e^{2x} − C_b`.
    pub fn force_neg(&self, x: f64) -> f64 {
        2.0 * self.k2() * (2.0 * x).exp() - self.c_b
    }

    /// `v²/2 + U(x)`.
    pub fn hamiltonian(&self, x: f64, v: f64) -> f64 {
        0.5 * v * v + self.potential(x)
    }

    /// Potential minimum `x* = ½·log(C_b/(2K²))`.
    pub fn x_star(&self) -> f64 {
        0.5 * (self.c_b / (2.0 * self.k2())).ln()
    }

    /// Leading-order average of `h²` over a period, `C_b/(2K²)`.
    pub fn mean_h2(&self) -> f64 {
        self.c_b / (2.0 * self.k2())
    }
}

/// Largest base learning rate accepted by [`drift_transition`].
pub const MAX_DRIFT_ETA: f64 = 0.1;

/// One ideal drift transition. With a `field`, `φ` moves along
/// `−2η²h²∇_Γ log λ₁(φ)`, is retracted onto `Γ`, and `‖∇_Γ‖²` is refreshed.
pub fn drift_transition(
    s: &DriftState,
    eta: f64,
    c_b: f64,
    field: Option<&dyn SharpnessField>,
) -> Result<DriftState> {
    if !(eta > 0.0 && eta <= MAX_DRIFT_ETA) {
        return Err(Error::InvalidHyperparameters(format!("η must lie in (0, {MAX_DRIFT_ETA}], got {eta}")));
    }
    let k2 = s.k2(c_b);
    let h = (1.0 - 2.0 * eta * s.u) * s.h;
    let u = s.u + 4.0 * eta * s.h * s.h * k2 - 2.0 * eta * c_b;
    match (field, &s.phi) {
        (Some(f), Some(phi)) => {
            let g = f.grad_log_sharpness(phi)?;
            let moved = phi - g * (2.0 * eta * eta * s.h * s.h);
            let phi2 = f.retract(&moved)?;
            let grad_norm_sq = f.grad_log_sharpness(&phi2)?.norm_squared();
            Ok(DriftState { h, u, grad_norm_sq, phi: Some(phi2) })
        }
        _ => Ok(DriftState { h, u, grad_norm_sq: s.grad_norm_sq, phi: s.phi.clone() }),
    }
}

/// Energy `E = u²/2 + K²h² + C_b·log(1/|h|)`.
pub fn energy(s: &DriftState, c_b: f64) -> Result<f64> {
    if s.h == 0.0 || !s.h.is_finite() {
        return Err(domain(format!("energy needs h ≠ 0, got {}", s.h)));
    }
    Ok(0.5 * s.u * s.u + s.k2(c_b) * s.h * s.h - c_b * s.h.abs().ln())
}

/// `steps` transitions from `s0`, returning all `steps + 1` states.
pub fn simulate(
    s0: &DriftState,
    eta: f64,
    c_b: f64,
    steps: usize,
    field: Option<&dyn SharpnessField>,
) -> Result<Vec<DriftState>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(s0.clone());
    for _ in 0..steps {
        let next = drift_transition(out.last().expect("non-empty"), eta, c_b, field)?;
        if !(next.h.is_finite() && next.u.is_finite()) {
            return Err(Error::NonFinite { step: out.len() as u64, what: "drift state".into() });
        }
        out.push(next);
    }
    Ok(out)
}

/// Maximum of `|E(Sₜ) − E(S₀)|` along a trajectory.
pub fn max_energy_deviation(traj: &[DriftState], c_b: f64) -> Result<f64> {
    let e0 = energy(&traj[0], c_b)?;
    traj.iter().try_fold(0.0f64, |m, s| Ok(m.max((energy(s, c_b)? - e0).abs())))
}

/// One leapfrog (Störmer–Verlet) step of `ẍ = −U'(x)`.
pub fn ham_ode_step(x: f64, v: f64, dtau: f64, p: &HamiltonianParams) -> (f64, f64) {
    let vh = v - 0.5 * dtau * p.force_neg(x);
    let x1 = x + dtau * vh;
    (x1, vh - 0.5 * dtau * p.force_neg(x1))
}

/// One classical RK4 step of the same system, for cross-checks.
pub fn ham_ode_step_rk4(x: f64, v: f64, dtau: f64, p: &HamiltonianParams) -> (f64, f64) {
    let f = |x: f64, v: f64| (v, -p.force_neg(x));
    let (a1, b1) = f(x, v);
    let (a2, b2) = f(x + 0.5 * dtau * a1, v + 0.5 * dtau * b1);
    let (a3, b3) = f(x + 0.5 * dtau * a2, v + 0.5 * dtau * b2);
    let (a4, b4) = f(x + dtau * a3, v + dtau * b3);
    (
        x + dtau / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4),
        v + dtau / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4),
    )
}

/// A sampled closed orbit in the `(log|h|, −u)` plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Orbit {
    pub energy: f64,
    pub period: f64,
    /// Evenly spaced in time over one period, starting at `x = x*`, `v > 0`.
    pub points: Vec<(f64, f64)>,
    /// Distance between the start and the state after one full period.
    pub closure: f64,
}

/// Leapfrog step used for orbit sampling.
pub const ORBIT_DTAU: f64 = 1e-4;

fn find_period(p: &HamiltonianParams, x0: f64, v0: f64) -> Result<f64> {
    let (mut x, mut v) = (x0, v0);
    let mut t = 0.0;
    let mut left = false;
    let limit = 1e7 as usize;
    for _ in 0..limit {
        let (x1, v1) = ham_ode_step(x, v, ORBIT_DTAU, p);
        if x1 < x0 {
            left = true;
        }
        if left && x < x0 && x1 >= x0 {
            return Ok(t + ORBIT_DTAU * (x0 - x) / (x1 - x));
        }
        x = x1;
        v = v1;
        t += ORBIT_DTAU;
    }
    Err(Error::NoConvergence { iters: limit, best: t, residual: (x - x0).abs() })
}

/// Samples the orbit of each energy level by leapfrog integration.
pub fn phase_portrait(
    p: &HamiltonianParams,
    energy_levels: &[f64],
    samples_per_orbit: usize,
    exec: Exec,
) -> Result<Vec<Orbit>> {
    if samples_per_orbit < 3 {
        return Err(Error::InvalidHyperparameters("need at least 3 samples per orbit".into()));
    }
    let xs = p.x_star();
    let umin = p.potential(xs);
    exec.try_map(energy_levels.len(), |i| {
        let e = energy_levels[i];
        if !(e > umin) {
            return Err(domain(format!("energy {e} is not above the potential minimum {umin}")));
        }
        let v0 = (2.0 * (e - umin)).sqrt();
        let period = find_period(p, xs, v0)?;
        let sub = ((period / samples_per_orbit as f64) / ORBIT_DTAU).ceil().max(1.0) as usize;
        let dt = period / (samples_per_orbit * sub) as f64;
        let (mut x, mut v) = (xs, v0);
        let mut points = Vec::with_capacity(samples_per_orbit);
        for _ in 0..samples_per_orbit {
            points.push((x, v));
            for _ in 0..sub {
                (x, v) = ham_ode_step(x, v, dt, p);
            }
        }
        let closure = ((x - xs).powi(2) + (v - v0).powi(2)).sqrt();
        Ok(Orbit { energy: e, period, points, closure })
    })
}

/// Indices `i` where `u` turns from positive to non-positive
/// (`u[i−1] > 0 ≥ u[i]`), the period boundaries.
pub fn period_boundaries(u: &[f64]) -> Vec<usize> {
    (1..u.len()).filter(|&i| u[i - 1] > 0.0 && u[i] <= 0.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Window {
    /// Every state.
    All,
    /// From the first to the last period boundary; at least `min` periods.
    Periods { min: usize },
}

/// Windowed mean of `h²`.
pub fn average_h2(traj: &[DriftState], window: Window) -> Result<f64> {
    let (a, b) = match window {
        Window::All => (0, traj.len()),
        Window::Periods { min } => {
            let u: Vec<f64> = traj.iter().map(|s| s.u).collect();
            let bd = period_boundaries(&u);
            if bd.len() < min.max(1) + 1 {
                return Err(Error::Infeasible(format!(
                    "window too short: {} complete periods, need {}",
                    bd.len().saturating_sub(1),
                    min.max(1)
                )));
            }
            (bd[0], bd[bd.len() - 1])
        }
    };
    if a >= b {
        return Err(Error::Infeasible("empty window".into()));
    }
    Ok(traj[a..b].iter().map(|s| s.h * s.h).sum::<f64>() / (b - a) as f64)
}
