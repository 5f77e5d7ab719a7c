//! Spectral tools over Hessian-vector-product operators.
//!
//! [`lanczos_top`] runs Lanczos with full reorthogonalization, restarting
//! explicitly from the best Ritz vector until the residual
//! `‖Hv − λv‖ ≤ tol·max(|λ|, 1)`. Further eigenpairs come from sequential
//! locking: each new run works in the orthogonal complement of the pairs
//! already found.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::exec::Exec;
use crate::linalg::{canonical_sign, gaussian_vector, normalize, sub_rng, sym_eigen_desc, Matrix, Vector};
use crate::silo::{fd, LossOracle};

/// A symmetric linear operator given by its action.
pub type Operator<'a> = dyn Fn(&Vector) -> Result<Vector> + Sync + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanczosOptions {
    /// Krylov subspace size per restart cycle.
    pub k: usize,
    pub seed: u64,
    /// Relative residual tolerance.
    pub tol: f64,
    pub max_restarts: usize,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self { k: 64, seed: 0, tol: 1e-9, max_restarts: 60 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumResult {
    pub lambda1: f64,
    pub v1: Vector,
    pub lambda2: Option<f64>,
    /// `λ_r` for the caller-supplied rank `r = D − D_Γ`.
    pub lambda_small: Option<f64>,
    pub iters: usize,
    pub residual: f64,
    /// All computed eigenvalues, descending.
    pub top_values: Vec<f64>,
    /// Matching unit eigenvectors.
    pub top_vectors: Vec<Vector>,
}

struct Pair {
    value: f64,
    vector: Vector,
    iters: usize,
    residual: f64,
}

fn orthogonalize(v: &mut Vector, against: &[Vector]) {
    for _ in 0..2 {
        for q in against {
            let d = q.dot(v);
            *v -= q * d;
        }
    }
}

/// Largest eigenpair of `op` restricted to the orthogonal complement of
/// `locked` (assumed orthonormal).
fn lanczos_one(op: &Operator<'_>, dim: usize, opts: &LanczosOptions, locked: &[Vector], stream: u64) -> Result<Pair> {
    let free = dim - locked.len();
    if free == 0 {
        return Err(Error::Infeasible("no directions left after deflation".into()));
    }
    let m = opts.k.max(2).min(free);
    let mut rng = sub_rng(opts.seed, stream);
    let mut fresh = |basis: &[Vector]| -> Option<Vector> {
        for _ in 0..8 {
            let mut v = gaussian_vector(&mut rng, dim);
            orthogonalize(&mut v, locked);
            orthogonalize(&mut v, basis);
            let n = v.norm();
            if n > 1e-8 {
                return Some(v / n);
            }
        }
        None
    };
    let apply = |v: &Vector| -> Result<Vector> {
        let mut w = op(v)?;
        if w.iter().any(|x| !x.is_finite()) {
            return Err(domain("operator returned a non-finite vector"));
        }
        orthogonalize(&mut w, locked);
        Ok(w)
    };
    let mut start = fresh(&[]).ok_or_else(|| Error::Infeasible("could not draw a start vector".into()))?;
    let mut best = (f64::NEG_INFINITY, start.clone(), f64::INFINITY);
    let mut iters = 0;
    for _ in 0..=opts.max_restarts {
        let mut basis: Vec<Vector> = vec![start.clone()];
        let mut alpha: Vec<f64> = Vec::with_capacity(m);
        let mut beta: Vec<f64> = Vec::with_capacity(m);
        let mut scale = 0.0f64;
        while basis.len() <= m {
            let j = basis.len() - 1;
            let mut w = apply(&basis[j])?;
            iters += 1;
            let a = basis[j].dot(&w);
            alpha.push(a);
            scale = scale.max(w.norm());
            orthogonalize(&mut w, &basis);
            if basis.len() == m {
                break;
            }
            let b = w.norm();
            if b <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
                // invariant subspace found; continue in a fresh direction
                match fresh(&basis) {
                    Some(v) => {
                        beta.push(0.0);
                        basis.push(v);
                    }
                    None => break,
                }
            } else {
                beta.push(b);
                basis.push(w / b);
            }
        }
        let n = alpha.len();
        basis.truncate(n);
        let t = Matrix::from_fn(n, n, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(t);
        let mut top = 0;
        for i in 1..n {
            if eig.eigenvalues[i] > eig.eigenvalues[top] {
                top = i;
            }
        }
        let y = eig.eigenvectors.column(top);
        let mut x = Vector::zeros(dim);
        for (i, q) in basis.iter().enumerate() {
            x += q * y[i];
        }
        orthogonalize(&mut x, locked);
        let x = normalize(&x)?;
        let hx = apply(&x)?;
        iters += 1;
        let theta = x.dot(&hx);
        let res = (&hx - &x * theta).norm();
        if res < best.2 || (res == best.2 && theta > best.0) {
            best = (theta, x.clone(), res);
        }
        if res <= opts.tol * theta.abs().max(1.0) || n == free {
            let mut v = best.1;
            canonical_sign(&mut v);
            return Ok(Pair { value: best.0, vector: v, iters, residual: best.2 });
        }
        start = x;
    }
    Err(Error::NoConvergence { iters, best: best.0, residual: best.2 })
}

/// Top eigenpair of a symmetric operator.
pub fn lanczos_top(op: &Operator<'_>, dim: usize, opts: &LanczosOptions) -> Result<SpectrumResult> {
    lanczos_top_k(op, dim, 1, None, opts)
}

/// The `n_top` largest eigenpairs by sequential locking. When `rank` is
/// given, `n_top` is raised to cover it and `lambda_small = λ_rank`.
pub fn lanczos_top_k(
    op: &Operator<'_>,
    dim: usize,
    n_top: usize,
    rank: Option<usize>,
    opts: &LanczosOptions,
) -> Result<SpectrumResult> {
    if dim == 0 {
        return Err(Error::InvalidHyperparameters("operator dimension must be ≥ 1".into()));
    }
    let want = n_top.max(1).max(rank.unwrap_or(0)).min(dim);
    let mut values = Vec::with_capacity(want);
    let mut vectors: Vec<Vector> = Vec::with_capacity(want);
    let mut iters = 0;
    let mut residual = 0.0;
    for j in 0..want {
        let p = lanczos_one(op, dim, opts, &vectors, j as u64)?;
        iters += p.iters;
        if j == 0 {
            residual = p.residual;
        }
        values.push(p.value);
        vectors.push(p.vector);
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let top_values: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let top_vectors: Vec<Vector> = order.iter().map(|&i| vectors[i].clone()).collect();
    Ok(SpectrumResult {
        lambda1: top_values[0],
        v1: top_vectors[0].clone(),
        lambda2: top_values.get(1).copied(),
        lambda_small: rank.and_then(|r| top_values.get(r.checked_sub(1)?).copied()),
        iters,
        residual,
        top_values,
        top_vectors,
    })
}

/// Full spectrum from a dense symmetric matrix, packaged like a Lanczos
/// result.
pub fn dense_spectrum(h: &Matrix, rank: Option<usize>) -> SpectrumResult {
    let (vals, vecs) = sym_eigen_desc(h);
    let top_vectors: Vec<Vector> = (0..vals.len())
        .map(|j| {
            let mut v: Vector = vecs.column(j).into_owned();
            canonical_sign(&mut v);
            v
        })
        .collect();
    let v1 = top_vectors[0].clone();
    let residual = (h * &v1 - &v1 * vals[0]).norm();
    SpectrumResult {
        lambda1: vals[0],
        v1,
        lambda2: vals.get(1).copied(),
        lambda_small: rank.and_then(|r| vals.get(r.checked_sub(1)?).copied()),
        iters: 0,
        residual,
        top_values: vals.iter().copied().collect(),
        top_vectors,
    }
}

/// Hessian spectrum of `oracle` at `w` from a dense assembly of `D` HVPs.
pub fn dense_hessian_spectrum<O: LossOracle + ?Sized>(
    oracle: &O,
    w: &Vector,
    rank: Option<usize>,
    exec: Exec,
) -> Result<SpectrumResult> {
    Ok(dense_spectrum(&fd::dense_hessian(oracle, w, exec)?, rank))
}

/// Hessian spectrum of `oracle` at `w` by Lanczos on its HVPs.
pub fn hessian_spectrum<O: LossOracle + ?Sized>(
    oracle: &O,
    w: &Vector,
    n_top: usize,
    rank: Option<usize>,
    opts: &LanczosOptions,
) -> Result<SpectrumResult> {
    let op = |v: &Vector| oracle.hvp(w, v);
    lanczos_top_k(&op, oracle.dim(), n_top, rank, opts)
}

/// Spherical sharpness `‖w‖²·λ₁(∇²L(w)) = λ₁(∇²L(w/‖w‖))`.
pub fn spherical_sharpness<O: LossOracle + ?Sized>(oracle: &O, w: &Vector, opts: &LanczosOptions) -> Result<f64> {
    let n2 = w.norm_squared();
    if !(n2 > 0.0) {
        return Err(domain("spherical sharpness needs w ≠ 0"));
    }
    Ok(hessian_spectrum(oracle, w, 1, None, opts)?.lambda1 * n2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenGap {
    /// `γ = min(λ₁ − λ₂, λ_small)/λ₁`.
    pub gamma: f64,
    /// False when `λ₁` is repeated (to relative `1e-9`).
    pub top_unique: bool,
}

/// Relative eigenvalue gap of a spectrum.
pub fn eigen_gap(s: &SpectrumResult) -> Result<EigenGap> {
    let l1 = s.lambda1;
    if !(l1 > 0.0) {
        return Err(domain(format!("eigen gap needs λ₁ > 0, got {l1}")));
    }
    let (l2, ls) = match (s.lambda2, s.lambda_small) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::GapTooSmall("λ₂ and λ_small are required".into())),
    };
    let top_unique = l1 - l2 > 1e-9 * l1;
    if !top_unique {
        return Ok(EigenGap { gamma: 0.0, top_unique });
    }
    Ok(EigenGap { gamma: (l1 - l2).min(ls) / l1, top_unique })
}

/// PAC-Bayes generalisation bound in terms of spherical sharpness:
/// `σ²λ₁/2 + (16σ³/3)·m3·(1 + (ln n/D)^1.5) + ℓmax·√((D/σ² + 2ln(n/δ))/(n−1))`.
pub fn pac_bayes_bound(lambda1: f64, m3: f64, ell_max: f64, n: u64, d: u64, sigma: f64, delta: f64) -> Result<f64> {
    if n < 2 || d < 1 {
        return Err(domain(format!("need n ≥ 2 and D ≥ 1, got n = {n}, D = {d}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(domain(format!("δ must lie in (0, 1), got {delta}")));
    }
    let nf = n as f64;
    let df = d as f64;
    let r = nf.ln() / df;
    let smax = 1.0 / (2.0 + 2.0 * r.sqrt());
    if !(sigma > 0.0 && sigma <= smax) {
        return Err(domain(format!("σ must lie in (0, {smax}], got {sigma}")));
    }
    let sharp = sigma * sigma * lambda1 / 2.0;
    let third = 16.0 * sigma.powi(3) / 3.0 * m3 * (1.0 + r.powf(1.5));
    let complexity = ell_max * ((df / (sigma * sigma) + 2.0 * (nf / delta).ln()) / (nf - 1.0)).sqrt();
    Ok(sharp + third + complexity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, rng};
    use crate::silo::Example3DProblem;
    use proptest::prelude::*;

    fn matrix_op(a: &Matrix) -> impl Fn(&Vector) -> Result<Vector> + Sync + '_ {
        move |v: &Vector| Ok(a * v)
    }

    #[test]
    fn diagonal_operator() {
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 2.0, 3.0]));
        let r = lanczos_top(&matrix_op(&a), 3, &LanczosOptions::default()).unwrap();
        assert!((r.lambda1 - 3.0).abs() < 1e-12);
        assert!((r.v1[2].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_symmetric_against_dense() {
        let mut aligned = 0;
        for i in 0..200u64 {
            let mut g = rng(5100 + i);
            let n = 10 + (i as usize * 7) % 91;
            let b = gaussian_matrix(&mut g, n, n);
            let a = (&b + b.transpose()) * 0.5;
            let r = lanczos_top(&matrix_op(&a), n, &LanczosOptions { seed: i, ..Default::default() }).unwrap();
            let (vals, vecs) = sym_eigen_desc(&a);
            assert!((r.lambda1 - vals[0]).abs() <= 1e-8 * vals[0].abs(), "matrix {i}");
            if vals[0] - vals[1] >= 1e-3 * vals[0] {
                let cos = r.v1.dot(&vecs.column(0)).abs();
                assert!(cos >= 1.0 - 1e-6, "matrix {i}: ⟨v₁, v₁_dense⟩ = {cos}");
                aligned += 1;
            }
        }
        assert!(aligned >= 100, "only {aligned} matrices with a large gap");
    }

    #[test]
    fn deflation_recovers_ordered_spectrum() {
        let mut g = rng(52);
        let b = gaussian_matrix(&mut g, 30, 30);
        let a = &b * b.transpose();
        let r = lanczos_top_k(&matrix_op(&a), 30, 5, Some(4), &LanczosOptions::default()).unwrap();
        let (vals, _) = sym_eigen_desc(&a);
        for i in 0..5 {
            assert!((r.top_values[i] - vals[i]).abs() <= 1e-8 * vals[0]);
        }
        assert_eq!(r.lambda_small, Some(r.top_values[3]));
    }

    #[test]
    fn rank_deficient_operator() {
        let mut g = rng(53);
        let b = gaussian_matrix(&mut g, 20, 3);
        let a = &b * b.transpose();
        let r = lanczos_top_k(&matrix_op(&a), 20, 4, None, &LanczosOptions::default()).unwrap();
        assert!(r.top_values[3].abs() < 1e-8 * r.lambda1);
    }

    #[test]
    fn deterministic_given_seed() {
        let mut g = rng(54);
        let b = gaussian_matrix(&mut g, 40, 40);
        let a = (&b + b.transpose()) * 0.5;
        let o = LanczosOptions { seed: 9, ..Default::default() };
        let x = lanczos_top(&matrix_op(&a), 40, &o).unwrap();
        let y = lanczos_top(&matrix_op(&a), 40, &o).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn non_convergence_reports_best_estimate() {
        let mut g = rng(55);
        let b = gaussian_matrix(&mut g, 200, 200);
        let a = (&b + b.transpose()) * 0.5;
        let o = LanczosOptions { k: 3, max_restarts: 1, tol: 1e-14, seed: 0 };
        let op = matrix_op(&a);
        let r = lanczos_top(&op, 200, &o);
        match r {
            Err(Error::NoConvergence { best, residual, .. }) => {
                assert!(best.is_finite() && residual > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn example3d_flattest_sharpness() {
        let p = Example3DProblem::identity();
        let r = hessian_spectrum(&p, &p.zeta_star(), 1, None, &LanczosOptions::default()).unwrap();
        assert!((r.lambda1 - 6.0).abs() < 1e-6);
        for z in [-0.5, 0.4, 0.8] {
            let s = spherical_sharpness(&p, &p.minimizer_at(z), &LanczosOptions::default()).unwrap();
            let expect = Example3DProblem::sharpness_on_arc(z);
            assert!((s - expect).abs() <= 1e-5 * expect);
            let s3 = spherical_sharpness(&p, &(p.minimizer_at(z) * 3.0), &LanczosOptions::default()).unwrap();
            assert!((s3 - s).abs() <= 1e-6 * s);
        }
    }

    #[test]
    fn example3d_gap_at_flattest_point() {
        let p = Example3DProblem::identity();
        let r = dense_hessian_spectrum(&p, &p.zeta_star(), Some(1), Exec::Sequential).unwrap();
        let g = eigen_gap(&r).unwrap();
        assert!(g.top_unique);
        assert!((g.gamma - 1.0).abs() < 1e-6);
    }

    fn fake(vals: &[f64], small: Option<f64>) -> SpectrumResult {
        SpectrumResult {
            lambda1: vals[0],
            v1: Vector::zeros(1),
            lambda2: vals.get(1).copied(),
            lambda_small: small,
            iters: 0,
            residual: 0.0,
            top_values: vals.to_vec(),
            top_vectors: vec![],
        }
    }

    #[test]
    fn gap_examples() {
        let g = eigen_gap(&fake(&[2.0, 1.0], Some(1.0))).unwrap();
        assert_eq!(g.gamma, 0.5);
        let g = eigen_gap(&fake(&[2.0, 2.0], Some(1.0))).unwrap();
        assert_eq!(g.gamma, 0.0);
        assert!(!g.top_unique);
        assert!(eigen_gap(&fake(&[2.0], None)).is_err());
    }

    #[test]
    fn pac_bayes_fixed_tuple() {
        // reference value from an independent calculator:
        // 0.1**2*12/2 + 16*0.1**3/3*0.5*(1+(log(1000)/50)**1.5)
        //   + 0.3*sqrt((50/0.1**2 + 2*log(1000/0.05))/999)
        let b = pac_bayes_bound(12.0, 0.5, 0.3, 1000, 50, 0.1, 0.05).unwrap();
        assert!((b - 0.735_287_701_556_424).abs() < 1e-12, "{b}");
    }

    #[test]
    fn pac_bayes_pure_complexity_and_preconditions() {
        let b = pac_bayes_bound(0.0, 0.0, 1.0, 100, 10, 0.2, 0.1).unwrap();
        let c = ((10.0 / 0.04 + 2.0 * (100.0f64 / 0.1).ln()) / 99.0).sqrt();
        assert!((b - c).abs() < 1e-14);
        assert!(pac_bayes_bound(1.0, 0.0, 1.0, 100, 10, 0.49, 0.1).is_err());
        assert!(pac_bayes_bound(1.0, 0.0, 1.0, 1, 10, 0.1, 0.1).is_err());
        assert!(pac_bayes_bound(1.0, 0.0, 1.0, 100, 10, 0.1, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn pac_bayes_increasing_in_sharpness(l in 0.0f64..100.0, dl in 1e-3f64..10.0) {
            let a = pac_bayes_bound(l, 0.1, 1.0, 500, 20, 0.1, 0.05).unwrap();
            let b = pac_bayes_bound(l + dl, 0.1, 1.0, 500, 20, 0.1, 0.05).unwrap();
            prop_assert!(b > a);
        }
    }
}
