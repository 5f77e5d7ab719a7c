//! Matrix completion with a batch-normalized factorisation `W = UVᵀ`.
//!
//! The output is `γ·W/σ` with `σ² = (1/N)·Σ_Ω W²ᵢⱼ` (no mean subtraction)
//! and `γ` fixed to the root second moment of the observed entries.
//! Parameters are flattened as `U` row-major followed by `V` row-major.
//!
//! With residuals `rₖ = γWₖ/σ − Mₖ` over the observed entries,
//! `∂L/∂Wₖ = (2γ/(Nσ))·(rₖ − c·Wₖ)` where `c = Σ rₗWₗ/(Nσ²)`.

use super::LossOracle;
use crate::error::{domain, Error, Result};
use crate::linalg::{Matrix, Vector};

#[derive(Debug, Clone)]
pub struct MatComBNProblem {
    d: usize,
    m: Matrix,
    omega: Vec<(usize, usize)>,
    m_obs: Vec<f64>,
    gamma: f64,
}

impl MatComBNProblem {
    pub fn new(m: Matrix, omega: Vec<(usize, usize)>) -> Result<Self> {
        let d = m.nrows();
        if m.ncols() != d {
            return Err(Error::InvalidHyperparameters("target matrix must be square".into()));
        }
        if omega.is_empty() {
            return Err(Error::InvalidHyperparameters("no observed entries".into()));
        }
        if let Some(&(i, j)) = omega.iter().find(|&&(i, j)| i >= d || j >= d) {
            return Err(Error::InvalidHyperparameters(format!("index ({i}, {j}) out of range")));
        }
        let m_obs: Vec<f64> = omega.iter().map(|&(i, j)| m[(i, j)]).collect();
        let gamma = (m_obs.iter().map(|v| v * v).sum::<f64>() / m_obs.len() as f64).sqrt();
        Ok(Self { d, m, omega, m_obs, gamma })
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn target(&self) -> &Matrix {
        &self.m
    }
    pub fn omega(&self) -> &[(usize, usize)] {
        &self.omega
    }
    pub fn n_obs(&self) -> usize {
        self.omega.len()
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Flattens `(U, V)` into the parameter layout.
    pub fn pack(&self, u: &Matrix, v: &Matrix) -> Vector {
        let d = self.d;
        let mut p = Vector::zeros(2 * d * d);
        for i in 0..d {
            for k in 0..d {
                p[i * d + k] = u[(i, k)];
                p[d * d + i * d + k] = v[(i, k)];
            }
        }
        p
    }

    /// Inverse of [`MatComBNProblem::pack`].
    pub fn unpack(&self, p: &Vector) -> (Matrix, Matrix) {
        let d = self.d;
        let u = Matrix::from_row_slice(d, d, &p.as_slice()[..d * d]);
        let v = Matrix::from_row_slice(d, d, &p.as_slice()[d * d..]);
        (u, v)
    }

    fn check_len(&self, p: &Vector) -> Result<()> {
        if p.len() != self.dim() {
            return Err(Error::LengthMismatch(format!("params have {} entries, expected {}", p.len(), self.dim())));
        }
        Ok(())
    }

    fn entry(&self, p: &[f64], i: usize, j: usize) -> f64 {
        let d = self.d;
        let u = &p[i * d..(i + 1) * d];
        let v = &p[d * d + j * d..d * d + (j + 1) * d];
        u.iter().zip(v).map(|(a, b)| a * b).sum()
    }

    /// Observed entries of `UVᵀ` and the batch statistic `σ`.
    fn observed(&self, p: &Vector) -> Result<(Vec<f64>, f64)> {
        self.check_len(p)?;
        let s = p.as_slice();
        let w: Vec<f64> = self.omega.iter().map(|&(i, j)| self.entry(s, i, j)).collect();
        let sigma = (w.iter().map(|x| x * x).sum::<f64>() / w.len() as f64).sqrt();
        let scale = p.norm_squared().max(f64::MIN_POSITIVE);
        if !(sigma * sigma > 1e-28 * scale * scale) || !sigma.is_finite() {
            return Err(domain(format!("batch statistic vanishes: σ = {sigma:e}")));
        }
        Ok((w, sigma))
    }

    /// The batch statistic `σ(U, V)`.
    pub fn sigma(&self, p: &Vector) -> Result<f64> {
        Ok(self.observed(p)?.1)
    }

    /// The network output `γ·UVᵀ/σ` on every entry.
    pub fn recovered(&self, p: &Vector) -> Result<Matrix> {
        let sigma = self.sigma(p)?;
        let (u, v) = self.unpack(p);
        Ok(u * v.transpose() * (self.gamma / sigma))
    }
}

impl LossOracle for MatComBNProblem {
    fn dim(&self) -> usize {
        2 * self.d * self.d
    }

    fn value(&self, p: &Vector) -> Result<f64> {
        let (w, sigma) = self.observed(p)?;
        let k = self.gamma / sigma;
        let sum: f64 = w.iter().zip(&self.m_obs).map(|(wv, mv)| (k * wv - mv).powi(2)).sum();
        Ok(sum / w.len() as f64)
    }

    fn grad(&self, p: &Vector) -> Result<Vector> {
        let (w, sigma) = self.observed(p)?;
        let d = self.d;
        let nf = w.len() as f64;
        let k = self.gamma / sigma;
        let r: Vec<f64> = w.iter().zip(&self.m_obs).map(|(wv, mv)| k * wv - mv).collect();
        let c = r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / (nf * sigma * sigma);
        let pre = 2.0 * self.gamma / (nf * sigma);
        let s = p.as_slice();
        let mut g = Vector::zeros(p.len());
        let gs = g.as_mut_slice();
        for (idx, &(i, j)) in self.omega.iter().enumerate() {
            let gij = pre * (r[idx] - c * w[idx]);
            for kk in 0..d {
                gs[i * d + kk] += gij * s[d * d + j * d + kk];
                gs[d * d + j * d + kk] += gij * s[i * d + kk];
            }
        }
        Ok(g)
    }

    /// Mean squared error over all `d²` entries, normalised by the
    /// training-batch statistic.
    fn test_value(&self, p: &Vector) -> Option<Result<f64>> {
        Some(self.recovered(p).map(|r| (r - &self.m).norm_squared() / (self.d * self.d) as f64))
    }
}
