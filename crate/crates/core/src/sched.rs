//! RMSprop-family learning-rate schedulers.
//!
//! A scheduler reads the gradient stream `gₜ` and emits effective learning
//! rates `η̃ₜ = 1/√ṽₜ`, where the moment estimate follows
//!
//! ```text
//! RMSprop: ṽₜ₊₁ = βṽₜ + (1−β)ḡₜ²
//! GWSI:    ṽₜ₊₁ = βṽₜ + (1−β)ḡₜ² + (1−β)²ḡₜ⁴/(4βṽₜ)
//! ```
//!
//! with `ḡₜ = ‖gₜ‖/η`. Both divide by the pre-update moment `√ṽₜ`.
//! Steps are pure: state in, state out.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    pub v_tilde: f64,
    pub eta: f64,
    pub beta: f64,
    pub t: u64,
}

impl SchedulerState {
    pub fn new(v_tilde: f64, eta: f64, beta: f64) -> Result<Self> {
        if !(v_tilde > 0.0) || !v_tilde.is_finite() {
            return Err(Error::InvalidHyperparameters(format!("ṽ must be positive, got {v_tilde}")));
        }
        if !(eta >= 0.0) || !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::InvalidHyperparameters(format!("need η ≥ 0 and β ∈ (0, 1], got η = {eta}, β = {beta}")));
        }
        Ok(Self { v_tilde, eta, beta, t: 0 })
    }

    /// The effective learning rate `1/√ṽ` this state emits next.
    pub fn eff_lr(&self) -> f64 {
        1.0 / self.v_tilde.sqrt()
    }

    /// Coefficients `((1−β)/η², (1−β)²/(4βη⁴))` multiplying `‖g‖²` and
    /// `‖g‖⁴/ṽ`. At `β = 1, η = 0` (zero weight decay) the limits of the
    /// GD+WD parameterization `η² = (β⁻¹−1)/2` are used.
    fn coefficients(&self) -> (f64, f64) {
        let one_m = 1.0 - self.beta;
        if self.eta == 0.0 && one_m == 0.0 {
            return (2.0 * self.beta, self.beta);
        }
        let e2 = self.eta * self.eta;
        (one_m / e2, one_m * one_m / (4.0 * self.beta * e2 * e2))
    }
}

/// One RMSprop step given the gradient.
pub fn rmsprop_step(state: &SchedulerState, g: &Vector) -> (f64, SchedulerState) {
    rmsprop_step_norm(state, g.norm())
}

/// [`rmsprop_step`] from the gradient norm alone.
pub fn rmsprop_step_norm(state: &SchedulerState, g_norm: f64) -> (f64, SchedulerState) {
    let (a, _) = state.coefficients();
    let g2 = g_norm * g_norm;
    let next = SchedulerState {
        v_tilde: state.beta * state.v_tilde + a * g2,
        t: state.t + 1,
        ..*state
    };
    (state.eff_lr(), next)
}

/// One GWSI step given the gradient.
pub fn gwsi_step(state: &SchedulerState, g: &Vector) -> (f64, SchedulerState) {
    gwsi_step_norm(state, g.norm())
}

/// [`gwsi_step`] from the gradient norm alone.
pub fn gwsi_step_norm(state: &SchedulerState, g_norm: f64) -> (f64, SchedulerState) {
    let (a, b) = state.coefficients();
    let g2 = g_norm * g_norm;
    let next = SchedulerState {
        v_tilde: state.beta * state.v_tilde + a * g2 + b * g2 * g2 / state.v_tilde,
        t: state.t + 1,
        ..*state
    };
    (state.eff_lr(), next)
}

/// The GWSI state whose effective learning rates coincide with those of
/// GD+WD (`η̂`, `λ̂`) started from a parameter of norm `w0_norm`:
/// `ṽ₀ = (1−η̂λ̂)²‖w₀‖⁴/η̂²`, `β = (1−η̂λ̂)⁴`, `η = √((β⁻¹−1)/2)`.
pub fn gwsi_from_gdwd(eta_hat: f64, lambda_hat: f64, w0_norm: f64) -> Result<SchedulerState> {
    let eta_in = eta_hat * lambda_hat;
    if !(eta_hat > 0.0) || !(lambda_hat >= 0.0) || !(eta_in < 1.0) {
        return Err(Error::InvalidHyperparameters(format!(
            "need η̂ > 0, λ̂ ≥ 0 and η̂λ̂ < 1, got η̂ = {eta_hat}, λ̂ = {lambda_hat}"
        )));
    }
    if !(w0_norm > 0.0) {
        return Err(Error::InvalidHyperparameters(format!("‖w₀‖ must be positive, got {w0_norm}")));
    }
    let c = 1.0 - eta_in;
    let beta = c.powi(4);
    let eta = ((1.0 / beta - 1.0) / 2.0).sqrt();
    let v0 = (c * w0_norm * w0_norm / eta_hat).powi(2);
    SchedulerState::new(v0, eta, beta)
}

/// Hyperparameters `(η, β) = (√(2η_in), 1 − 4η_in)` under which GD+WD is a
/// quasi-RMSprop scheduler.
pub fn quasi_rmsprop_params(eta_in: f64) -> (f64, f64) {
    ((2.0 * eta_in).sqrt(), 1.0 - 4.0 * eta_in)
}

/// Per-step deviations from the RMSprop contract:
/// `δ¹ₜ = |η̃ₜ − 1/√ṽₜ|` and `δ²ₜ = |ṽₜ₊₁ − (βṽₜ + (1−β)ḡₜ²)|`.
///
/// `etas` and `grad_norms` have one entry per step and `vtilde` one more.
pub fn qrms_residuals(
    etas: &[f64],
    vtilde: &[f64],
    grad_norms: &[f64],
    eta: f64,
    beta: f64,
) -> Result<Vec<(f64, f64)>> {
    if etas.len() != grad_norms.len() || vtilde.len() != etas.len() + 1 {
        return Err(Error::LengthMismatch(format!(
            "{} learning rates, {} moments, {} gradients",
            etas.len(),
            vtilde.len(),
            grad_norms.len()
        )));
    }
    let coef = (1.0 - beta) / (eta * eta);
    Ok((0..etas.len())
        .map(|t| {
            let d1 = (etas[t] - 1.0 / vtilde[t].sqrt()).abs();
            let pred = beta * vtilde[t] + coef * grad_norms[t] * grad_norms[t];
            (d1, (vtilde[t + 1] - pred).abs())
        })
        .collect())
}
