//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{domain, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// The crate-wide seeded generator.
pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for sub-task `k` of seed `seed`.
pub fn sub_rng(seed: u64, k: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(k.wrapping_add(1));
    r
}

pub fn gaussian_vector(rng: &mut Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_matrix(rng: &mut Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// A uniformly random unit vector.
pub fn random_unit(rng: &mut Rng, n: usize) -> Vector {
    loop {
        let v = gaussian_vector(rng, n);
        let nv = v.norm();
        if nv > 1e-12 {
            return v / nv;
        }
    }
}

/// Haar-random orthogonal matrix via QR of a Gaussian matrix with the
/// diagonal of R made positive.
pub fn random_orthogonal(rng: &mut Rng, n: usize) -> Matrix {
    let a = gaussian_matrix(rng, n, n);
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Returns `v / ‖v‖`, failing on the zero vector.
pub fn normalize(v: &Vector) -> Result<Vector> {
    let n = v.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(domain(format!("cannot normalize vector of norm {n}")));
    }
    Ok(v / n)
}

/// `(I - θθᵀ) v` for unit `θ`.
pub fn sphere_tangent(theta: &Vector, v: &Vector) -> Vector {
    v - theta * theta.dot(v)
}

/// Flips `v` in place so that it points along `reference`.
pub fn align_sign(v: &mut Vector, reference: &Vector) {
    if v.dot(reference) < 0.0 {
        v.neg_mut();
    }
}

/// Fixes the sign of `v` so its largest-magnitude entry is positive.
pub fn canonical_sign(v: &mut Vector) {
    let mut best = 0.0f64;
    for &x in v.iter() {
        if x.abs() > best.abs() {
            best = x;
        }
    }
    if best < 0.0 {
        v.neg_mut();
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn rel_frobenius(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
pub fn sym_eigen_desc(a: &Matrix) -> (Vector, Matrix) {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let vals = Vector::from_fn(n, |i, _| eig.eigenvalues[idx[i]]);
    let mut vecs = Matrix::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Orthonormal basis of the orthogonal complement of the columns of `a`
/// (assumed orthonormal) inside the span of the columns of `within`.
pub fn complement_basis(within: &Matrix, a: &Matrix, tol: f64) -> Matrix {
    let mut cols: Vec<Vector> = Vec::new();
    for j in 0..within.ncols() {
        let mut v: Vector = within.column(j).into_owned();
        for _ in 0..2 {
            for k in 0..a.ncols() {
                let c = a.column(k);
                let d = c.dot(&v);
                v -= c * d;
            }
            for c in &cols {
                let d = c.dot(&v);
                v -= c * d;
            }
        }
        let n = v.norm();
        if n > tol {
            cols.push(v / n);
        }
    }
    if cols.is_empty() {
        return Matrix::zeros(within.nrows(), 0);
    }
    Matrix::from_columns(&cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let mut r = rng(3);
        let q = random_orthogonal(&mut r, 5);
        let e = &q.transpose() * &q - Matrix::identity(5, 5);
        assert!(e.norm() < 1e-12);
    }

    #[test]
    fn eigen_sorted_descending() {
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 3.0, 2.0]));
        let (vals, vecs) = sym_eigen_desc(&a);
        assert_eq!(vals.as_slice(), &[3.0, 2.0, 1.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn complement_of_axis() {
        let id = Matrix::identity(3, 3);
        let a = Matrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let c = complement_basis(&id, &a, 1e-10);
        assert_eq!(c.ncols(), 2);
        assert!(c.row(0).norm() < 1e-14);
    }

    #[test]
    fn normalize_rejects_zero() {
        assert!(normalize(&Vector::zeros(3)).is_err());
    }

    #[test]
    fn sub_streams_differ() {
        use rand::Rng as _;
        let a: f64 = sub_rng(1, 0).random();
        let b: f64 = sub_rng(1, 1).random();
        assert_ne!(a, b);
    }
}
