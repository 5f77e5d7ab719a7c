//! Finite-difference cross-check oracles.
//!
//! Steps are relative to the parameter norm:
//!
//! | routine          | differentiates | step                      |
//! |------------------|----------------|---------------------------|
//! | [`fd_grad`]      | `value`        | `1e-6·max(‖w‖, 1e-300)`   |
//! | [`grad_diff_hvp`]| `grad`         | `eps·‖w‖/‖v‖`             |
//! | [`fd_hvp`]       | [`fd_grad`]    | `1e-4·‖w‖/‖v‖`            |

use super::LossOracle;
use crate::error::Result;
use crate::exec::Exec;
use crate::linalg::{Matrix, Vector};

pub const FD_GRAD_EPS: f64 = 1e-6;
pub const FD_HVP_EPS: f64 = 1e-4;

fn step_along(w: &Vector, v: &Vector, eps: f64) -> f64 {
    let wn = w.norm().max(1e-300);
    let vn = v.norm().max(1e-300);
    eps * wn / vn
}

/// Central difference of `value` along each coordinate axis.
pub fn fd_grad<O: LossOracle + ?Sized>(oracle: &O, w: &Vector) -> Result<Vector> {
    fd_grad_with(oracle, w, Exec::Sequential)
}

pub fn fd_grad_with<O: LossOracle + ?Sized>(oracle: &O, w: &Vector, exec: Exec) -> Result<Vector> {
    let h = FD_GRAD_EPS * w.norm().max(1e-300);
    let comps = exec.try_map(w.len(), |i| {
        let mut wp = w.clone();
        let mut wm = w.clone();
        wp[i] += h;
        wm[i] -= h;
        Ok::<f64, crate::Error>((oracle.value(&wp)? - oracle.value(&wm)?) / (2.0 * h))
    })?;
    Ok(Vector::from_vec(comps))
}

/// Central difference of the analytic gradient along `v`.
pub fn grad_diff_hvp<O: LossOracle + ?Sized>(
    oracle: &O,
    w: &Vector,
    v: &Vector,
    eps: f64,
) -> Result<Vector> {
    if v.norm() == 0.0 {
        return Ok(Vector::zeros(w.len()));
    }
    let h = step_along(w, v, eps);
    let gp = oracle.grad(&(w + v * h))?;
    let gm = oracle.grad(&(w - v * h))?;
    Ok((gp - gm) / (2.0 * h))
}

/// Hessian-vector product from two finite-difference layers: a central
/// difference of [`fd_grad`] along `v`. Independent of the analytic gradient.
pub fn fd_hvp<O: LossOracle + ?Sized>(oracle: &O, w: &Vector, v: &Vector) -> Result<Vector> {
    if v.norm() == 0.0 {
        return Ok(Vector::zeros(w.len()));
    }
    let h = step_along(w, v, FD_HVP_EPS);
    let gp = fd_grad(oracle, &(w + v * h))?;
    let gm = fd_grad(oracle, &(w - v * h))?;
    Ok((gp - gm) / (2.0 * h))
}

/// Dense Hessian assembled column by column from `oracle.hvp`, then
/// symmetrised.
pub fn dense_hessian<O: LossOracle + ?Sized>(oracle: &O, w: &Vector, exec: Exec) -> Result<Matrix> {
    let d = w.len();
    let cols = exec.try_map(d, |j| oracle.hvp(w, &Vector::from_fn(d, |i, _| (i == j) as u8 as f64)))?;
    let h = Matrix::from_columns(&cols);
    Ok((&h + h.transpose()) * 0.5)
}
