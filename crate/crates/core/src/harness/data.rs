//! Seeded problem generators and initialisations.

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::dynamics::{GdwdConfig, OptState};
use crate::error::{Error, Result};
use crate::linalg::{gaussian_vector, normalize, random_orthogonal, random_unit, sub_rng, Matrix, Rng, Vector};
use crate::silo::{Example3DProblem, LinRegBNProblem, LossOracle, MatComBNProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinRegShape {
    pub d: usize,
    pub n: usize,
    pub n_test: usize,
}

impl Default for LinRegShape {
    fn default() -> Self {
        Self { d: 40, n: 20, n_test: 500 }
    }
}

/// Standard deviation of the ground-truth bias (variance `0.01`).
pub const BIAS_STD: f64 = 0.1;

/// `rows` samples from `N(0, diag(1/d, 2/d, …, 1))`.
pub fn linreg_inputs(rng: &mut Rng, rows: usize, d: usize) -> Matrix {
    let scales: Vec<f64> = (1..=d).map(|j| (j as f64 / d as f64).sqrt()).collect();
    let mut x = Matrix::zeros(rows, d);
    for i in 0..rows {
        for j in 0..d {
            x[(i, j)] = scales[j] * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
    }
    x
}

/// Inputs `xᵢ ~ N(0, diag(1/d, 2/d, …, 1))`, targets `yᵢ = w_GTᵀxᵢ + b_GT`
/// with `w_GT` uniform on the sphere and `b_GT ~ N(0, 0.01)`. The test set
/// is drawn from the same distribution.
pub fn gen_linreg_with(seed: u64, shape: LinRegShape) -> Result<LinRegBNProblem> {
    let LinRegShape { d, n, n_test } = shape;
    let mut r = sub_rng(seed, 0);
    let w_gt = random_unit(&mut r, d);
    let b_gt = Normal::new(0.0, BIAS_STD).expect("valid normal").sample(&mut r);
    let mut rx = sub_rng(seed, 1);
    let x = linreg_inputs(&mut rx, n, d);
    let x_test = linreg_inputs(&mut rx, n_test, d);
    let y = (&x * &w_gt).add_scalar(b_gt);
    let y_test = (&x_test * &w_gt).add_scalar(b_gt);
    LinRegBNProblem::new(x, y, x_test, y_test)
}

pub fn gen_linreg(seed: u64) -> Result<LinRegBNProblem> {
    gen_linreg_with(seed, LinRegShape::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatComShape {
    pub d: usize,
    pub rank: usize,
    pub n_obs: usize,
}

impl Default for MatComShape {
    fn default() -> Self {
        Self { d: 50, rank: 2, n_obs: 800 }
    }
}

/// `M = (d/‖M̃‖_F)·M̃` with `M̃ = U*V*ᵀ` and entries of `U*, V*` uniform on
/// `[−1, 1]`; `Ω` is sampled uniformly without replacement.
pub fn gen_matcom(d: usize, rank: usize, n_obs: usize, seed: u64) -> Result<MatComBNProblem> {
    if n_obs > d * d || rank == 0 || d == 0 {
        return Err(Error::InvalidHyperparameters(format!(
            "cannot observe {n_obs} entries of a {d}×{d} matrix of rank {rank}"
        )));
    }
    let mut r = sub_rng(seed, 0);
    let unif = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let us = Matrix::from_fn(d, rank, |_, _| unif.sample(&mut r));
    let vs = Matrix::from_fn(d, rank, |_, _| unif.sample(&mut r));
    let mt = &us * vs.transpose();
    let m = &mt * (d as f64 / mt.norm());
    let mut ro = sub_rng(seed, 1);
    let mut omega: Vec<(usize, usize)> = sample(&mut ro, d * d, n_obs).into_iter().map(|k| (k / d, k % d)).collect();
    omega.sort_unstable();
    MatComBNProblem::new(m, omega)
}

/// Gaussian `(U, V)` initialisation with entries of standard deviation `std`.
pub fn matcom_init(problem: &MatComBNProblem, std: f64, seed: u64) -> Vector {
    let mut r = sub_rng(seed, 2);
    gaussian_vector(&mut r, problem.dim()) * std
}

/// Initial point of the three-dimensional example in `F`-coordinates.
pub const EXAMPLE3D_W0: [f64; 3] = [0.3, 1.3, 1.2];

/// A seeded random orthogonal `Q` and `w₀ = Qᵀ(0.3, 1.3, 1.2)`.
pub fn gen_example3d(seed: u64) -> (Example3DProblem, Vector) {
    let mut r = sub_rng(seed, 0);
    let p = Example3DProblem::new(random_orthogonal(&mut r, 3)).expect("QR factor is orthogonal");
    let w0 = p.from_f_coords(&Vector::from_column_slice(&EXAMPLE3D_W0));
    (p, w0)
}

/// Starts near `ζ₀ ∈ Γ`: direction `(ζ₀ + ξ)/‖ζ₀ + ξ‖` with
/// `ξ ~ N(0, σ₀²I/D)` and norm chosen so that `η̃₀ = 2/λ₁ + offset`.
pub fn init_near_minimizer(
    zeta0: &Vector,
    sigma0: f64,
    lambda1: f64,
    config: &GdwdConfig,
    offset: f64,
    seed: u64,
) -> Result<OptState> {
    if !(sigma0 >= 0.0) || !(lambda1 > 0.0) {
        return Err(Error::InvalidHyperparameters(format!("need σ₀ ≥ 0 and λ₁ > 0, got {sigma0}, {lambda1}")));
    }
    let eff = 2.0 / lambda1 + offset;
    if !(eff > 0.0) {
        return Err(Error::InvalidHyperparameters(format!("target effective LR {eff} is not positive")));
    }
    let d = zeta0.len();
    let theta = if sigma0 == 0.0 {
        normalize(zeta0)?
    } else {
        let mut r = sub_rng(seed, 3);
        let xi = gaussian_vector(&mut r, d) * (sigma0 / (d as f64).sqrt());
        normalize(&(zeta0 + xi))?
    };
    Ok(OptState::new(theta * config.norm_for_eff_lr(eff)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linreg_is_deterministic() {
        let a = gen_linreg(5).unwrap();
        let b = gen_linreg(5).unwrap();
        assert_eq!(a.x(), b.x());
        assert_eq!(a.y(), b.y());
        assert_eq!(a.x_test(), b.x_test());
        assert_ne!(gen_linreg(6).unwrap().x(), a.x());
        assert_eq!((a.n(), a.dim(), a.x_test().nrows()), (20, 40, 500));
    }

    #[test]
    fn linreg_targets_are_exactly_linear() {
        let p = gen_linreg(1).unwrap();
        let (w, b) = crate::manifold::min_norm_oracle(&p).unwrap();
        let res = (p.x() * &w).add_scalar(b) - p.y();
        assert!(res.amax() <= 1e-10);
    }

    #[test]
    fn matcom_normalisation_and_rank() {
        let p = gen_matcom(50, 2, 800, 3).unwrap();
        let m = p.target();
        assert!((m.norm_squared() / 2500.0 - 1.0).abs() <= 1e-12);
        let sv = m.clone().singular_values();
        assert!(sv[2] <= 1e-10 * sv[0].max(1.0));
        assert!(sv[1] > 1e-3);
        assert_eq!(p.n_obs(), 800);
        let mut o = p.omega().to_vec();
        o.dedup();
        assert_eq!(o.len(), 800);
        assert!(gen_matcom(3, 1, 10, 0).is_err());
    }

    #[test]
    fn example3d_start() {
        let (p, w0) = gen_example3d(0);
        let f = p.to_f_coords(&w0);
        for (a, b) in f.iter().zip(EXAMPLE3D_W0) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(gen_example3d(0).1, w0);
    }

    #[test]
    fn init_degenerate_and_eff_lr() {
        let cfg = GdwdConfig::new(0.5, 2e-4).unwrap();
        let z = normalize(&Vector::from_vec(vec![1.0, 2.0, 2.0])).unwrap();
        let s = init_near_minimizer(&z, 0.0, 8.0, &cfg, 0.0, 1).unwrap();
        assert_eq!(s.theta().unwrap(), z);
        assert!((s.eff_lr(&cfg) - 0.25).abs() <= 1e-15);
        let s = init_near_minimizer(&z, 0.1, 8.0, &cfg, -0.01, 1).unwrap();
        assert!((s.eff_lr(&cfg) - 0.24).abs() <= 1e-14);
        assert_ne!(s.theta().unwrap(), z);
    }
}
