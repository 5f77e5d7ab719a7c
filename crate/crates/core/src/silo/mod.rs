//! Scale-invariant loss oracles.
//!
//! Every oracle satisfies `L(cw) = L(w)` for `c > 0`, hence
//! `⟨∇L(w), w⟩ = 0`, `∇L(cw) = ∇L(w)/c`, `∇²L(w)w = -∇L(w)` and
//! `∇²L(cw) = ∇²L(w)/c²`.

pub mod example3d;
pub mod fd;
pub mod linreg;
pub mod matcom;

pub use example3d::Example3DProblem;
pub use linreg::LinRegBNProblem;
pub use matcom::MatComBNProblem;

use crate::error::Result;
use crate::linalg::Vector;

/// Relative step of the default finite-difference HVP.
pub const HVP_FD_EPS: f64 = 1e-5;

/// A scale-invariant loss over a flat parameter vector.
///
/// Implementations are immutable after construction and safe to evaluate
/// from several threads at once.
pub trait LossOracle: Sync {
    fn dim(&self) -> usize;

    fn value(&self, w: &Vector) -> Result<f64>;

    fn grad(&self, w: &Vector) -> Result<Vector>;

    /// Hessian-vector product. Defaults to a central difference of
    /// [`LossOracle::grad`] along `v` with step `1e-5·‖w‖/‖v‖`.
    fn hvp(&self, w: &Vector, v: &Vector) -> Result<Vector> {
        fd::grad_diff_hvp(self, w, v, HVP_FD_EPS)
    }

    /// Held-out metric, when the problem has one.
    fn test_value(&self, _w: &Vector) -> Option<Result<f64>> {
        None
    }
}

impl<T: LossOracle + ?Sized> LossOracle for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, w: &Vector) -> Result<f64> {
        (**self).value(w)
    }
    fn grad(&self, w: &Vector) -> Result<Vector> {
        (**self).grad(w)
    }
    fn hvp(&self, w: &Vector, v: &Vector) -> Result<Vector> {
        (**self).hvp(w, v)
    }
    fn test_value(&self, w: &Vector) -> Option<Result<f64>> {
        (**self).test_value(w)
    }
}

/// Any of the three problem families behind one concrete type.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
pub enum Problem {
    LinReg(LinRegBNProblem),
    MatCom(MatComBNProblem),
    Example3D(Example3DProblem),
}

impl LossOracle for Problem {
    fn dim(&self) -> usize {
        match self {
            Problem::LinReg(p) => p.dim(),
            Problem::MatCom(p) => p.dim(),
            Problem::Example3D(p) => p.dim(),
        }
    }
    fn value(&self, w: &Vector) -> Result<f64> {
        match self {
            Problem::LinReg(p) => p.value(w),
            Problem::MatCom(p) => p.value(w),
            Problem::Example3D(p) => p.value(w),
        }
    }
    fn grad(&self, w: &Vector) -> Result<Vector> {
        match self {
            Problem::LinReg(p) => p.grad(w),
            Problem::MatCom(p) => p.grad(w),
            Problem::Example3D(p) => p.grad(w),
        }
    }
    fn hvp(&self, w: &Vector, v: &Vector) -> Result<Vector> {
        match self {
            Problem::LinReg(p) => p.hvp(w, v),
            Problem::MatCom(p) => p.hvp(w, v),
            Problem::Example3D(p) => p.hvp(w, v),
        }
    }
    fn test_value(&self, w: &Vector) -> Option<Result<f64>> {
        match self {
            Problem::LinReg(p) => p.test_value(w),
            Problem::MatCom(p) => p.test_value(w),
            Problem::Example3D(p) => p.test_value(w),
        }
    }
}
