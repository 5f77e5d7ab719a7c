//! Linear regression with a batch-normalized linear model.
//!
//! The prediction for input `x` is `w̃ᵀx + b̃` with
//! `w̃ = σy·w/‖w‖_Σ` and `b̃ = μy − w̃ᵀμx`, so the loss only sees the
//! direction of `w`. Statistics use population (`1/n`) normalization.
//!
//! Writing `x̃ᵢ = xᵢ − μx`, `a = X̃w`, `s = ‖w‖_Σ = ‖a‖/√n`,
//! `p = a/s`, `q = (y − μy)/σy` and `e = p − q`:
//!
//! ```text
//! L(w)  = (σy²/n)·‖e‖²
//! ∇L(w) = (2σy²/n)·[X̃ᵀe/s − (aᵀe)·Σw/s³]
//! ```

use super::LossOracle;
use crate::error::{domain, Error, Result};
use crate::linalg::{Matrix, Vector};

#[derive(Debug, Clone)]
pub struct LinRegBNProblem {
    x: Matrix,
    y: Vector,
    x_test: Matrix,
    y_test: Vector,
    mu_x: Vector,
    xc: Matrix,
    sigma_x: Matrix,
    mu_y: f64,
    sigma_y: f64,
    q: Vector,
    z: Vector,
}

impl LinRegBNProblem {
    /// Builds the problem from training data `x` (n×d), `y` and a held-out set.
    pub fn new(x: Matrix, y: Vector, x_test: Matrix, y_test: Vector) -> Result<Self> {
        let (n, d) = x.shape();
        if n < 2 {
            return Err(Error::InvalidHyperparameters(format!("need n >= 2 samples, got {n}")));
        }
        if y.len() != n {
            return Err(Error::LengthMismatch(format!("{} targets for {n} inputs", y.len())));
        }
        if x_test.ncols() != d || x_test.nrows() != y_test.len() {
            return Err(Error::LengthMismatch("held-out set shape".into()));
        }
        let nf = n as f64;
        let mu_x = x.row_sum().transpose() / nf;
        let mut xc = x.clone();
        for mut row in xc.row_iter_mut() {
            row -= mu_x.transpose();
        }
        let sigma_x = xc.transpose() * &xc / nf;
        let mu_y = y.sum() / nf;
        let var_y = y.iter().map(|v| (v - mu_y).powi(2)).sum::<f64>() / nf;
        let sigma_y = var_y.sqrt();
        if !(sigma_y > 0.0) {
            return Err(domain("targets have zero variance"));
        }
        let q = y.map(|v| (v - mu_y) / sigma_y);
        let z = xc.transpose() * &q / nf;
        Ok(Self { x, y, x_test, y_test, mu_x, xc, sigma_x, mu_y, sigma_y, q, z })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }
    pub fn x(&self) -> &Matrix {
        &self.x
    }
    pub fn y(&self) -> &Vector {
        &self.y
    }
    pub fn x_test(&self) -> &Matrix {
        &self.x_test
    }
    pub fn y_test(&self) -> &Vector {
        &self.y_test
    }
    pub fn mu_x(&self) -> &Vector {
        &self.mu_x
    }
    pub fn centered_x(&self) -> &Matrix {
        &self.xc
    }
    pub fn sigma_x(&self) -> &Matrix {
        &self.sigma_x
    }
    pub fn mu_y(&self) -> f64 {
        self.mu_y
    }
    pub fn sigma_y(&self) -> f64 {
        self.sigma_y
    }
    /// Standardised targets `qᵢ = (yᵢ − μy)/σy`.
    pub fn q(&self) -> &Vector {
        &self.q
    }
    /// `z = (1/n)·Σ qᵢ x̃ᵢ`.
    pub fn z(&self) -> &Vector {
        &self.z
    }

    /// `(a, s)` with `a = X̃w` and `s = ‖w‖_Σ`, rejecting degenerate directions.
    fn project(&self, w: &Vector) -> Result<(Vector, f64)> {
        if w.len() != self.dim() {
            return Err(Error::LengthMismatch(format!("w has {} entries, expected {}", w.len(), self.dim())));
        }
        let a = &self.xc * w;
        let s2 = a.norm_squared() / self.n() as f64;
        let scale = w.norm_squared() * self.sigma_x.trace().max(f64::MIN_POSITIVE);
        if !(s2 > 1e-28 * scale) || !s2.is_finite() {
            return Err(domain(format!("degenerate direction: ‖w‖_Σ² = {s2:e}")));
        }
        Ok((a, s2.sqrt()))
    }

    /// `‖w‖_Σ = √(wᵀΣx w)`.
    pub fn sigma_norm(&self, w: &Vector) -> Result<f64> {
        Ok(self.project(w)?.1)
    }

    /// The effective linear model `(w̃, b̃)` realised by `w`.
    pub fn effective_params(&self, w: &Vector) -> Result<(Vector, f64)> {
        let s = self.sigma_norm(w)?;
        let wt = w * (self.sigma_y / s);
        let bt = self.mu_y - wt.dot(&self.mu_x);
        Ok((wt, bt))
    }

    /// `max_i |⟨w/‖w‖_Σ, x̃ᵢ⟩ − qᵢ|`, zero exactly on the minimizer manifold.
    pub fn membership_residual(&self, w: &Vector) -> Result<f64> {
        let (a, s) = self.project(w)?;
        Ok((a / s - &self.q).amax())
    }

    /// `2‖w̃‖²(Σx − zzᵀ)`, the Hessian at a point of the minimizer manifold.
    pub fn closed_form_hessian(&self, w: &Vector) -> Result<Matrix> {
        let (wt, _) = self.effective_params(w)?;
        Ok((&self.sigma_x - &self.z * self.z.transpose()) * (2.0 * wt.norm_squared()))
    }

    fn predict_error(&self, x: &Matrix, y: &Vector, w: &Vector) -> Result<f64> {
        let (wt, bt) = self.effective_params(w)?;
        let r = x * &wt - y + Vector::from_element(y.len(), bt);
        Ok(r.norm_squared() / y.len().max(1) as f64)
    }
}

impl LossOracle for LinRegBNProblem {
    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn value(&self, w: &Vector) -> Result<f64> {
        let (a, s) = self.project(w)?;
        let e = a / s - &self.q;
        Ok(self.sigma_y.powi(2) * e.norm_squared() / self.n() as f64)
    }

    fn grad(&self, w: &Vector) -> Result<Vector> {
        let (a, s) = self.project(w)?;
        let nf = self.n() as f64;
        let e = &a / s - &self.q;
        let k = 2.0 * self.sigma_y.powi(2) / nf;
        let sigma_w = self.xc.tr_mul(&a) / nf;
        let xte = self.xc.tr_mul(&e);
        Ok((xte / s - sigma_w * (a.dot(&e) / s.powi(3))) * k)
    }

    /// Analytic directional derivative of [`LossOracle::grad`].
    fn hvp(&self, w: &Vector, v: &Vector) -> Result<Vector> {
        let (a, s) = self.project(w)?;
        let nf = self.n() as f64;
        let k = 2.0 * self.sigma_y.powi(2) / nf;
        let e = &a / s - &self.q;
        let b = &self.xc * v;
        let ds = a.dot(&b) / (nf * s);
        let de = &b / s - &a * (ds / (s * s));
        let sigma_w = self.xc.tr_mul(&a) / nf;
        let sigma_v = self.xc.tr_mul(&b) / nf;
        let ae = a.dot(&e);
        let s3 = s.powi(3);
        let t1 = self.xc.tr_mul(&de) / s - self.xc.tr_mul(&e) * (ds / (s * s));
        let t2 = &sigma_w * ((b.dot(&e) + a.dot(&de)) / s3) + sigma_v * (ae / s3)
            - sigma_w * (3.0 * ae * ds / (s3 * s));
        Ok((t1 - t2) * k)
    }

    fn test_value(&self, w: &Vector) -> Option<Result<f64>> {
        if self.y_test.is_empty() {
            return None;
        }
        Some(self.predict_error(&self.x_test, &self.y_test, w))
    }
}
