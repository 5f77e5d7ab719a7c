//! A three-dimensional scale-invariant loss `L(w) = F(Qw)` with
//! `F(x, y, z) = 2 − (x + y)/√(x² − xy + y²)` and a fixed orthogonal `Q`.
//!
//! On the unit sphere the minimizers form the great-circle arc `x = y > 0`,
//! where the Hessian is `3/(1 − z²)·[[1, −1, 0], [−1, 1, 0], [0, 0, 0]]`.

use super::LossOracle;
use crate::error::{domain, Error, Result};
use crate::linalg::{Matrix, Vector};

#[derive(Debug, Clone)]
pub struct Example3DProblem {
    q: Matrix,
}

impl Example3DProblem {
    /// Fails unless `q` is 3×3 and orthogonal to `1e-12`.
    pub fn new(q: Matrix) -> Result<Self> {
        if q.shape() != (3, 3) {
            return Err(Error::InvalidHyperparameters("Q must be 3x3".into()));
        }
        let e = (q.transpose() * &q - Matrix::identity(3, 3)).amax();
        if e > 1e-12 {
            return Err(Error::InvalidHyperparameters(format!("Q is not orthogonal (error {e:e})")));
        }
        Ok(Self { q })
    }

    pub fn identity() -> Self {
        Self { q: Matrix::identity(3, 3) }
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    /// Maps a point given in `F`-coordinates to parameter space (`Qᵀp`).
    pub fn from_f_coords(&self, p: &Vector) -> Vector {
        self.q.tr_mul(p)
    }

    /// Maps parameters to `F`-coordinates (`Qw`).
    pub fn to_f_coords(&self, w: &Vector) -> Vector {
        &self.q * w
    }

    /// The flattest minimizer `Qᵀ(1/√2, 1/√2, 0)`.
    pub fn zeta_star(&self) -> Vector {
        let c = std::f64::consts::FRAC_1_SQRT_2;
        self.from_f_coords(&Vector::from_vec(vec![c, c, 0.0]))
    }

    /// The unit minimizer with `F`-coordinate `z ∈ (−1, 1)`.
    pub fn minimizer_at(&self, z: f64) -> Vector {
        let a = ((1.0 - z * z) / 2.0).sqrt();
        self.from_f_coords(&Vector::from_vec(vec![a, a, z]))
    }

    /// Spherical sharpness on the minimizer arc, `6/(1 − z²)`.
    pub fn sharpness_on_arc(z: f64) -> f64 {
        6.0 / (1.0 - z * z)
    }

    /// The Hessian at a unit minimizer in `F`-coordinates.
    pub fn arc_hessian_f_coords(z: f64) -> Matrix {
        Matrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 1.0, 0.0, 0.0, 0.0, 0.0]) * (3.0 / (1.0 - z * z))
    }

    fn coords(&self, w: &Vector) -> Result<(f64, f64, f64)> {
        if w.len() != 3 {
            return Err(Error::LengthMismatch(format!("w has {} entries, expected 3", w.len())));
        }
        let p = &self.q * w;
        let (x, y) = (p[0], p[1]);
        let r = x * x - x * y + y * y;
        if !(r > 1e-30 * w.norm_squared()) {
            return Err(domain("F is singular on the line x = y = 0"));
        }
        Ok((x, y, r))
    }
}

impl LossOracle for Example3DProblem {
    fn dim(&self) -> usize {
        3
    }

    fn value(&self, w: &Vector) -> Result<f64> {
        let (x, y, r) = self.coords(w)?;
        Ok(2.0 - (x + y) / r.sqrt())
    }

    fn grad(&self, w: &Vector) -> Result<Vector> {
        let (x, y, r) = self.coords(w)?;
        let s = x + y;
        let rs = r.sqrt();
        let r32 = r * rs;
        let gx = -1.0 / rs + 0.5 * s * (2.0 * x - y) / r32;
        let gy = -1.0 / rs + 0.5 * s * (2.0 * y - x) / r32;
        Ok(self.q.tr_mul(&Vector::from_vec(vec![gx, gy, 0.0])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Exec;
    use crate::linalg::{random_orthogonal, rel_frobenius, rng};
    use crate::silo::fd;

    #[test]
    fn zero_on_the_minimizer_line() {
        let p = Example3DProblem::identity();
        let w = Vector::from_vec(vec![1.0, 1.0, 0.0]);
        assert!(p.value(&w).unwrap().abs() < 1e-15);
    }

    #[test]
    fn singular_line_is_an_error() {
        let p = Example3DProblem::identity();
        assert!(matches!(p.value(&Vector::from_vec(vec![0.0, 0.0, 1.0])), Err(Error::Domain(_))));
    }

    #[test]
    fn hessian_at_flattest_point() {
        let p = Example3DProblem::identity();
        let h = fd::dense_hessian(&p, &p.zeta_star(), Exec::Sequential).unwrap();
        let expect = Example3DProblem::arc_hessian_f_coords(0.0);
        assert!(rel_frobenius(&h, &expect) < 1e-6);
    }

    #[test]
    fn hessian_along_the_arc_after_undoing_q() {
        let mut r = rng(31);
        let p = Example3DProblem::new(random_orthogonal(&mut r, 3)).unwrap();
        for z in [-0.6, -0.2, 0.3, 0.7] {
            let w = p.minimizer_at(z);
            let h = fd::dense_hessian(&p, &w, Exec::Sequential).unwrap();
            let hf = p.q() * h * p.q().transpose();
            assert!(rel_frobenius(&hf, &Example3DProblem::arc_hessian_f_coords(z)) < 1e-6);
        }
    }

    #[test]
    fn grad_matches_fd_and_is_scale_invariant() {
        let mut r = rng(32);
        let p = Example3DProblem::new(random_orthogonal(&mut r, 3)).unwrap();
        let w = p.from_f_coords(&Vector::from_vec(vec![0.3, 1.3, 1.2]));
        let g = p.grad(&w).unwrap();
        let gf = fd::fd_grad(&p, &w).unwrap();
        assert!((&g - gf).norm() <= 1e-7 * g.norm());
        assert!((p.value(&(&w * 5.0)).unwrap() - p.value(&w).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_orthogonal_q() {
        assert!(Example3DProblem::new(Matrix::identity(3, 3) * 2.0).is_err());
    }
}
