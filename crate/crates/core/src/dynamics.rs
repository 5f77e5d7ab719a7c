//! Optimizer updates and the trace-recording run loop.
//!
//! GD+WD on a scale-invariant loss,
//! `wₜ₊₁ = (1 − η̂λ̂)wₜ − η̂∇L(wₜ)`, moves the direction `θₜ = wₜ/‖wₜ‖`
//! exactly like projected GD on the unit sphere with effective learning
//! rate `η̃ₜ = η̂/((1 − η̂λ̂)‖wₜ‖²)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::trace::{Trace, TraceRow};
use crate::linalg::{normalize, Vector};
use crate::silo::LossOracle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdwdConfig {
    pub eta_hat: f64,
    pub lambda_hat: f64,
}

impl GdwdConfig {
    /// Requires `η̂ > 0`, `λ̂ ≥ 0` and `η̂λ̂ ≤ 1/2`.
    pub fn new(eta_hat: f64, lambda_hat: f64) -> Result<Self> {
        if !(eta_hat > 0.0 && eta_hat.is_finite()) || !(lambda_hat >= 0.0) || !(eta_hat * lambda_hat <= 0.5) {
            return Err(Error::InvalidHyperparameters(format!(
                "need η̂ > 0, λ̂ ≥ 0, η̂λ̂ ≤ 1/2; got η̂ = {eta_hat}, λ̂ = {lambda_hat}"
            )));
        }
        Ok(Self { eta_hat, lambda_hat })
    }

    /// Intrinsic learning rate `η_in = η̂λ̂`.
    pub fn eta_in(&self) -> f64 {
        self.eta_hat * self.lambda_hat
    }

    /// `η̃ = η̂/((1 − η̂λ̂)‖w‖²)`.
    pub fn eff_lr(&self, w_norm: f64) -> f64 {
        self.eta_hat / ((1.0 - self.eta_in()) * w_norm * w_norm)
    }

    /// The norm `‖w‖` at which the effective learning rate equals `eff_lr`.
    pub fn norm_for_eff_lr(&self, eff_lr: f64) -> f64 {
        (self.eta_hat / ((1.0 - self.eta_in()) * eff_lr)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub w: Vector,
    pub t: u64,
}

impl OptState {
    pub fn new(w: Vector) -> Self {
        Self { w, t: 0 }
    }

    pub fn theta(&self) -> Result<Vector> {
        normalize(&self.w)
    }

    pub fn eff_lr(&self, config: &GdwdConfig) -> f64 {
        config.eff_lr(self.w.norm())
    }
}

fn check_finite(v: &Vector, step: u64, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { step, what: what.to_string() })
    }
}

/// One GD+WD step.
pub fn gdwd_step<O: LossOracle + ?Sized>(state: &OptState, config: &GdwdConfig, oracle: &O) -> Result<OptState> {
    let g = oracle.grad(&state.w)?;
    check_finite(&g, state.t, "gradient")?;
    let w = &state.w * (1.0 - config.eta_in()) - g * config.eta_hat;
    check_finite(&w, state.t + 1, "parameters")?;
    Ok(OptState { w, t: state.t + 1 })
}

/// One projected GD step on the unit sphere: `θ' = Π(θ − η̃∇L(θ))`.
pub fn pgd_step<O: LossOracle + ?Sized>(theta: &Vector, eff_lr: f64, oracle: &O) -> Result<Vector> {
    let g = oracle.grad(theta)?;
    normalize(&(theta - g * eff_lr))
}

/// State of RMSprop with a scalar learning rate in its standard form, where
/// the moment `v` tracks `‖∇L‖²` directly (the scheduler moment is `v/η²`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarRmsState {
    pub v: f64,
    pub eta: f64,
    pub beta: f64,
    pub t: u64,
}

impl ScalarRmsState {
    pub fn new(v: f64, eta: f64, beta: f64) -> Result<Self> {
        if !(v > 0.0) || !(eta > 0.0) || !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::InvalidHyperparameters(format!(
                "need v > 0, η > 0, β ∈ (0, 1]; got v = {v}, η = {eta}, β = {beta}"
            )));
        }
        Ok(Self { v, eta, beta, t: 0 })
    }

    /// The learning rate `η/√v` used by the next step.
    pub fn lr(&self) -> f64 {
        self.eta / self.v.sqrt()
    }

    /// Scheduler moment `ṽ = v/η²`.
    pub fn v_tilde(&self) -> f64 {
        self.v / (self.eta * self.eta)
    }
}

/// One scalar RMSprop step in ambient space:
/// `θ' = θ − (η/√v)∇L(θ)`, `v' = βv + (1−β)‖∇L(θ)‖²`.
pub fn scalar_rmsprop_step<O: LossOracle + ?Sized>(
    theta: &Vector,
    state: &ScalarRmsState,
    oracle: &O,
) -> Result<(Vector, ScalarRmsState)> {
    let g = oracle.grad(theta)?;
    check_finite(&g, state.t, "gradient")?;
    let next = theta - &g * state.lr();
    let v = state.beta * state.v + (1.0 - state.beta) * g.norm_squared();
    Ok((next, ScalarRmsState { v, t: state.t + 1, ..*state }))
}

/// The optimizer driving a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Driver {
    Gdwd(GdwdConfig),
    ScalarRms(ScalarRmsState),
}

/// Which steps produce a trace row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordPolicy {
    pub every: u64,
    /// Every step up to and including this one is recorded.
    pub dense_until: u64,
}

impl RecordPolicy {
    pub fn every(every: u64) -> Self {
        Self { every: every.max(1), dense_until: 0 }
    }

    pub fn records(&self, t: u64, last: u64) -> bool {
        t <= self.dense_until || t.is_multiple_of(self.every.max(1)) || t == last
    }
}

/// What an observer sees at a recorded step.
#[derive(Debug)]
pub struct StepView<'a> {
    pub t: u64,
    pub w: &'a Vector,
    pub theta: &'a Vector,
    pub eff_lr: f64,
    /// Scheduler moment `ṽ = 1/η̃²`.
    pub v_tilde: f64,
}

/// Observer invoked on each recorded row; it may fill optional columns.
pub type Observer<'a> = dyn FnMut(&StepView<'_>, &mut TraceRow) -> Result<()> + 'a;

/// Runs `steps` iterations from `w0`, recording the initial state and every
/// step selected by `policy`. Each iteration computes the gradient at the
/// current iterate, updates, then records.
pub fn run<O: LossOracle + ?Sized>(
    driver: &Driver,
    oracle: &O,
    w0: &Vector,
    steps: u64,
    policy: RecordPolicy,
    observer: &mut Observer<'_>,
) -> Result<Trace> {
    if policy.every == 0 {
        return Err(Error::InvalidHyperparameters("record cadence must be ≥ 1".into()));
    }
    let mut trace = Trace::default();
    let mut w = w0.clone();
    let mut rms = match driver {
        Driver::ScalarRms(s) => Some(*s),
        Driver::Gdwd(_) => None,
    };
    let mut record = |t: u64, w: &Vector, rms: &Option<ScalarRmsState>, trace: &mut Trace| -> Result<()> {
        let w_norm = w.norm();
        let eff_lr = match (driver, rms) {
            (Driver::Gdwd(c), _) => c.eff_lr(w_norm),
            (_, Some(s)) => s.lr(),
            _ => unreachable!(),
        };
        let theta = normalize(w)?;
        let loss = oracle.value(w)?;
        let mut row = TraceRow::new(t, loss, w_norm, eff_lr);
        if let Some(tv) = oracle.test_value(w) {
            row.test_loss = Some(tv?);
        }
        let view = StepView { t, w, theta: &theta, eff_lr, v_tilde: 1.0 / (eff_lr * eff_lr) };
        observer(&view, &mut row).map_err(|e| Error::Observer { step: t, source: Box::new(e) })?;
        trace.rows.push(row);
        Ok(())
    };
    record(0, &w, &rms, &mut trace)?;
    for t in 0..steps {
        match driver {
            Driver::Gdwd(c) => {
                w = gdwd_step(&OptState { w, t }, c, oracle)?.w;
            }
            Driver::ScalarRms(_) => {
                let s = rms.expect("scalar RMSprop state");
                let (next, s2) = scalar_rmsprop_step(&w, &s, oracle)?;
                check_finite(&next, t + 1, "parameters")?;
                w = next;
                rms = Some(s2);
            }
        }
        if policy.records(t + 1, steps) {
            record(t + 1, &w, &rms, &mut trace)?;
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, gaussian_vector, random_orthogonal, rng};
    use crate::sched::{gwsi_from_gdwd, gwsi_step_norm, rmsprop_step_norm, SchedulerState};
    use crate::silo::{Example3DProblem, LinRegBNProblem};

    struct Flat;

    impl LossOracle for Flat {
        fn dim(&self) -> usize {
            3
        }
        fn value(&self, _w: &Vector) -> Result<f64> {
            Ok(0.0)
        }
        fn grad(&self, w: &Vector) -> Result<Vector> {
            Ok(Vector::zeros(w.len()))
        }
    }

    fn linreg(seed: u64) -> LinRegBNProblem {
        let mut r = rng(seed);
        let x = gaussian_matrix(&mut r, 20, 40);
        let wgt = gaussian_vector(&mut r, 40);
        let y = &x * &wgt;
        LinRegBNProblem::new(x, y, Matrix0::zeros(0, 40), Vector::zeros(0)).unwrap()
    }

    type Matrix0 = crate::linalg::Matrix;

    fn ex3d() -> (Example3DProblem, Vector) {
        let mut r = rng(41);
        let p = Example3DProblem::new(random_orthogonal(&mut r, 3)).unwrap();
        let w0 = p.from_f_coords(&Vector::from_vec(vec![0.3, 1.3, 1.2]));
        (p, w0)
    }

    #[test]
    fn zero_gradient_shrinks_by_decay() {
        let c = GdwdConfig::new(0.5, 0.1).unwrap();
        let s = OptState::new(Vector::from_vec(vec![1.0, 2.0, 3.0]));
        let s1 = gdwd_step(&s, &c, &Flat).unwrap();
        assert_eq!(s1.w, &s.w * 0.95);
        let r = s1.eff_lr(&c) / s.eff_lr(&c);
        assert!((r - 0.95f64.powi(-2)).abs() < 1e-14);
    }

    #[test]
    fn config_rejects_large_intrinsic_lr() {
        assert!(GdwdConfig::new(1.0, 0.6).is_err());
        assert!(GdwdConfig::new(-1.0, 0.0).is_err());
    }

    #[test]
    fn gdwd_step_matches_straight_line_reimplementation() {
        let (p, w0) = ex3d();
        let c = GdwdConfig::new(0.5, 0.08).unwrap();
        let s1 = gdwd_step(&OptState::new(w0.clone()), &c, &p).unwrap();
        // independent evaluation of ∇F by hand
        let f = p.q() * &w0;
        let (x, y) = (f[0], f[1]);
        let r = x * x - x * y + y * y;
        let gx = -1.0 / r.sqrt() + 0.5 * (x + y) * (2.0 * x - y) / (r * r.sqrt());
        let gy = -1.0 / r.sqrt() + 0.5 * (x + y) * (2.0 * y - x) / (r * r.sqrt());
        let g = p.q().tr_mul(&Vector::from_vec(vec![gx, gy, 0.0]));
        let expect = &w0 * (1.0 - 0.5 * 0.08) - g * 0.5;
        assert_eq!(s1.w, expect);
    }

    #[test]
    fn norm_recursion_holds() {
        let p = linreg(42);
        let c = GdwdConfig::new(0.5, 2e-4).unwrap();
        let mut r = rng(43);
        let mut s = OptState::new(gaussian_vector(&mut r, 40));
        for _ in 0..200 {
            let n2 = s.w.norm_squared();
            let gt = p.grad(&s.theta().unwrap()).unwrap().norm_squared();
            let s1 = gdwd_step(&s, &c, &p).unwrap();
            let pred = (1.0 - c.eta_in()).powi(2) * n2 + c.eta_hat.powi(2) * gt / n2;
            assert!((s1.w.norm_squared() - pred).abs() <= 1e-10 * pred);
            s = s1;
        }
    }

    #[test]
    fn direction_follows_pgd_with_gwsi_rates() {
        let p = linreg(44);
        let c = GdwdConfig::new(0.5, 2e-4).unwrap();
        let mut r = rng(45);
        let mut s = OptState::new(gaussian_vector(&mut r, 40));
        let mut sch = gwsi_from_gdwd(c.eta_hat, c.lambda_hat, s.w.norm()).unwrap();
        let mut theta = s.theta().unwrap();
        for _ in 0..500 {
            let g = p.grad(&theta).unwrap();
            let (lr, next) = gwsi_step_norm(&sch, g.norm());
            theta = pgd_step(&theta, lr, &p).unwrap();
            sch = next;
            s = gdwd_step(&s, &c, &p).unwrap();
            let dev = (&theta - s.theta().unwrap()).norm();
            assert!(dev <= 1e-12, "deviation {dev}");
            theta = s.theta().unwrap();
            assert!((theta.norm() - 1.0).abs() <= f64::EPSILON);
        }
    }

    #[test]
    fn pgd_fixed_at_zero_gradient() {
        let th = Vector::from_vec(vec![0.6, 0.8, 0.0]);
        assert_eq!(pgd_step(&th, 3.0, &Flat).unwrap(), th);
    }

    #[test]
    fn scalar_rmsprop_zero_gradient_and_beta_one() {
        let s = ScalarRmsState::new(2.0, 0.1, 0.9).unwrap();
        let th = Vector::from_vec(vec![1.0, 0.0, 0.0]);
        let (t1, s1) = scalar_rmsprop_step(&th, &s, &Flat).unwrap();
        assert_eq!(t1, th);
        assert_eq!(s1.v, 1.8);

        let p = linreg(46);
        let mut r = rng(47);
        let w = gaussian_vector(&mut r, 40);
        let s = ScalarRmsState::new(4.0, 0.3, 1.0).unwrap();
        let (t1, s1) = scalar_rmsprop_step(&w, &s, &p).unwrap();
        let gd = &w - p.grad(&w).unwrap() * (0.3 / 2.0);
        assert_eq!(t1, gd);
        assert_eq!(s1.v, 4.0);
    }

    #[test]
    fn scalar_rmsprop_is_scheduler_plus_gd() {
        let p = linreg(48);
        let mut r = rng(49);
        let mut w = gaussian_vector(&mut r, 40);
        let mut s = ScalarRmsState::new(1e-2, 0.05, 0.99).unwrap();
        let mut sch = SchedulerState::new(s.v_tilde(), s.eta, s.beta).unwrap();
        let mut wc = w.clone();
        for _ in 0..300 {
            let (w1, s1) = scalar_rmsprop_step(&w, &s, &p).unwrap();
            let g = p.grad(&wc).unwrap();
            let (lr, sch1) = rmsprop_step_norm(&sch, g.norm());
            let wc1 = &wc - g * lr;
            assert!((&w1 - &wc1).norm() <= 1e-12 * w1.norm());
            assert!((s1.v_tilde() - sch1.v_tilde).abs() <= 1e-14 * sch1.v_tilde);
            w = w1;
            s = s1;
            wc = wc1;
            sch = sch1;
        }
    }

    #[test]
    fn run_is_reproducible_and_ordered() {
        let (p, w0) = ex3d();
        let d = Driver::Gdwd(GdwdConfig::new(0.5, 0.08).unwrap());
        let mut calls = 0;
        let a = run(&d, &p, &w0, 100, RecordPolicy::every(7), &mut |_, _| {
            calls += 1;
            Ok(())
        })
        .unwrap();
        let b = run(&d, &p, &w0, 100, RecordPolicy::every(7), &mut |_, _| Ok(())).unwrap();
        assert_eq!(a, b);
        assert_eq!(calls, a.len());
        assert_eq!(a.rows[0].t, 0);
        assert_eq!(a.last().unwrap().t, 100);
        assert!(a.rows.windows(2).all(|w| w[0].t < w[1].t));
    }

    #[test]
    fn observer_failure_carries_step() {
        let (p, w0) = ex3d();
        let d = Driver::Gdwd(GdwdConfig::new(0.5, 0.08).unwrap());
        let err = run(&d, &p, &w0, 10, RecordPolicy::every(1), &mut |v, _| {
            if v.t == 4 {
                Err(Error::Infeasible("stop".into()))
            } else {
                Ok(())
            }
        })
        .unwrap_err();
        assert!(matches!(err, Error::Observer { step: 4, .. }));
    }

    #[test]
    fn non_finite_aborts_with_step() {
        struct Bad;
        impl LossOracle for Bad {
            fn dim(&self) -> usize {
                2
            }
            fn value(&self, _w: &Vector) -> Result<f64> {
                Ok(0.0)
            }
            fn grad(&self, w: &Vector) -> Result<Vector> {
                Ok(if w.norm() < 0.9 { Vector::from_element(2, f64::NAN) } else { Vector::zeros(2) })
            }
        }
        let d = Driver::Gdwd(GdwdConfig::new(1.0, 0.1).unwrap());
        let err = run(&d, &Bad, &Vector::from_vec(vec![1.0, 0.0]), 5, RecordPolicy::every(1), &mut |_, _| Ok(()))
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite { step: 2, .. }), "{err}");
    }
}
