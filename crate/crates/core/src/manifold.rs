//! Minimizer-manifold machinery on the unit sphere.
//!
//! `Φ` maps a direction to the end point of gradient flow on the sphere,
//! approximated by small-step projected GD. At a point `φ ∈ Γ` the Hessian
//! has rank `r = D − D_Γ`; its top `r` eigenvectors span the normal space
//! and `P₀` projects onto the null space, so the sphere tangent space of `Γ`
//! is the range of `(I − φφᵀ)P₀`.
//!
//! The sharpness-reduction flow is
//! `dζ/dτ = −∇_Γ log λ₁(ζ) / (4 + (2/C_b)‖∇_Γ log λ₁(ζ)‖²)`.
//! For GD+WD (`C_b = 2`) step `t` corresponds to `τ = tη² = 2tη_in`.

use serde::{Deserialize, Serialize};

use crate::dynamics::pgd_step;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::{complement_basis, normalize, sphere_tangent, sym_eigen_desc, Matrix, Vector};
use crate::silo::{LinRegBNProblem, LossOracle};
use crate::spectra::{dense_hessian_spectrum, hessian_spectrum, LanczosOptions, SpectrumResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectOptions {
    pub loss_tol: f64,
    pub inner_lr: f64,
    pub max_inner_steps: usize,
}

impl Default for ProjectOptions {
    fn default() -> Self {
        Self { loss_tol: 1e-12, inner_lr: 0.005, max_inner_steps: 2_000_000 }
    }
}

/// `Φ(θ)`: projected GD on the sphere with a fixed step until
/// `L ≤ loss_tol`. Returns the end point and the number of steps taken.
pub fn gf_project<O: LossOracle + ?Sized>(theta: &Vector, oracle: &O, opts: &ProjectOptions) -> Result<(Vector, usize)> {
    let mut phi = normalize(theta)?;
    let mut loss = oracle.value(&phi)?;
    for step in 0..opts.max_inner_steps {
        if loss <= opts.loss_tol {
            return Ok((phi, step));
        }
        phi = pgd_step(&phi, opts.inner_lr, oracle)?;
        loss = oracle.value(&phi)?;
        if !loss.is_finite() {
            return Err(Error::ProjectionFailed { steps: step + 1, loss });
        }
    }
    if loss <= opts.loss_tol {
        return Ok((phi, opts.max_inner_steps));
    }
    Err(Error::ProjectionFailed { steps: opts.max_inner_steps, loss })
}

/// [`gf_project`] that retries with the step divided by 4 (at most `retries`
/// times) when the fixed step fails to converge.
pub fn gf_project_adaptive<O: LossOracle + ?Sized>(
    theta: &Vector,
    oracle: &O,
    opts: &ProjectOptions,
    retries: usize,
) -> Result<(Vector, usize)> {
    let mut o = *opts;
    let mut total = 0;
    for _ in 0..retries {
        match gf_project(theta, oracle, &o) {
            Ok((phi, k)) => return Ok((phi, total + k)),
            Err(Error::ProjectionFailed { steps, .. }) => {
                total += steps;
                o.inner_lr /= 4.0;
            }
            Err(e) => return Err(e),
        }
    }
    gf_project(theta, oracle, &o).map(|(phi, k)| (phi, total + k))
}

/// How Hessian spectra at manifold points are computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SpectrumMode {
    /// Dense assembly from `D` HVPs; all eigenpairs.
    Dense,
    /// Deflated Lanczos for the top `rank` eigenpairs.
    Lanczos(LanczosOptions),
}

/// A point of the minimizer manifold with its Hessian spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPoint {
    pub phi: Vector,
    pub spectrum: SpectrumResult,
    /// `μ = 2/λ₁(φ)`.
    pub mu: f64,
    /// Hessian rank `D − D_Γ`.
    pub rank: usize,
}

impl ManifoldPoint {
    /// Normal directions: the top `rank` eigenvectors.
    pub fn normal_basis(&self) -> &[Vector] {
        &self.spectrum.top_vectors[..self.rank]
    }

    /// `P₀v`: the component of `v` in the Hessian null space.
    pub fn null_component(&self, v: &Vector) -> Vector {
        let mut out = v.clone();
        for n in self.normal_basis() {
            out -= n * n.dot(v);
        }
        out
    }

    /// Orthonormal basis of the sphere tangent space of `Γ` at `φ`.
    pub fn tangent_basis(&self) -> Matrix {
        let d = self.phi.len();
        let mut cols: Vec<Vector> = self.normal_basis().to_vec();
        cols.push(self.phi.clone());
        complement_basis(&Matrix::identity(d, d), &Matrix::from_columns(&cols), 1e-8)
    }
}

/// Spectrum at `phi` with at least `rank` eigenpairs.
pub fn spectrum_at<O: LossOracle + ?Sized>(
    oracle: &O,
    phi: &Vector,
    rank: usize,
    mode: &SpectrumMode,
    exec: Exec,
) -> Result<SpectrumResult> {
    match mode {
        SpectrumMode::Dense => dense_hessian_spectrum(oracle, phi, Some(rank), exec),
        SpectrumMode::Lanczos(o) => hessian_spectrum(oracle, phi, rank.max(2), Some(rank), o),
    }
}

/// Builds a [`ManifoldPoint`] at an already projected `phi`.
pub fn manifold_point<O: LossOracle + ?Sized>(
    oracle: &O,
    phi: Vector,
    rank: usize,
    mode: &SpectrumMode,
    exec: Exec,
) -> Result<ManifoldPoint> {
    if rank == 0 || rank >= phi.len() {
        return Err(Error::InvalidHyperparameters(format!("rank {rank} out of range for D = {}", phi.len())));
    }
    let spectrum = spectrum_at(oracle, &phi, rank, mode, exec)?;
    let mu = 2.0 / spectrum.lambda1;
    Ok(ManifoldPoint { phi, spectrum, mu, rank })
}

/// `Φ(θ)` together with its spectrum.
pub fn project<O: LossOracle + ?Sized>(
    theta: &Vector,
    oracle: &O,
    popts: &ProjectOptions,
    rank: usize,
    mode: &SpectrumMode,
    exec: Exec,
) -> Result<ManifoldPoint> {
    let (phi, _) = gf_project(theta, oracle, popts)?;
    manifold_point(oracle, phi, rank, mode, exec)
}

/// `(I − φφᵀ)P₀v`, refusing when the normal and null spaces are not
/// separated by a relative gap of at least `gap_tol`.
pub fn tangent_project(point: &ManifoldPoint, v: &Vector, gap_tol: f64) -> Result<Vector> {
    let vals = &point.spectrum.top_values;
    let l1 = point.spectrum.lambda1;
    let lr = vals[point.rank - 1];
    let next = vals.get(point.rank).copied().unwrap_or(0.0);
    if !(lr - next.max(0.0) >= gap_tol * l1) {
        return Err(Error::GapTooSmall(format!(
            "λ_r = {lr:e} and λ_(r+1) = {next:e} not separated at relative gap {gap_tol:e}"
        )));
    }
    Ok(sphere_tangent(&point.phi, &point.null_component(v)))
}

/// Oscillation observables of `θ` around its projection.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftObservables {
    pub x: Vector,
    pub h: f64,
    pub h_scaled: f64,
    pub u: f64,
    pub misalignment: f64,
    pub p0_residual: f64,
}

/// Computes `x = θ − φ`, `h = ⟨x, v₁⟩`, `h/η`, `u = (μ²ṽ − 1)/η`, the
/// misalignment `‖P_{≠0,1}x‖` and `‖P₀x‖`.
pub fn extract_observables(theta: &Vector, v_tilde: f64, eta: f64, point: &ManifoldPoint) -> DriftObservables {
    let x = theta - &point.phi;
    let normals = point.normal_basis();
    let h = normals[0].dot(&x);
    let mut mis = Vector::zeros(x.len());
    for n in &normals[1..] {
        mis += n * n.dot(&x);
    }
    let p0 = point.null_component(&x);
    DriftObservables {
        h,
        h_scaled: h / eta,
        u: (point.mu * point.mu * v_tilde - 1.0) / eta,
        misalignment: mis.norm(),
        p0_residual: p0.norm(),
        x,
    }
}

/// A tangent field `∇_Γ log λ₁` together with a retraction onto `Γ`.
pub trait SharpnessField: Sync {
    fn grad_log_sharpness(&self, zeta: &Vector) -> Result<Vector>;
    /// Maps a point near `Γ` back onto it.
    fn retract(&self, v: &Vector) -> Result<Vector>;
    fn log_sharpness(&self, zeta: &Vector) -> Result<f64>;
}

/// Finite-difference field for any oracle: central differences of
/// `log λ₁(Φ(retract(φ + s·bᵢ)))` along an orthonormal tangent basis.
pub struct FdSharpnessField<'a, O: LossOracle + ?Sized> {
    pub oracle: &'a O,
    pub rank: usize,
    pub project: ProjectOptions,
    pub mode: SpectrumMode,
    pub fd_step: f64,
    pub exec: Exec,
}

impl<'a, O: LossOracle + ?Sized> FdSharpnessField<'a, O> {
    pub fn new(oracle: &'a O, rank: usize) -> Self {
        Self {
            oracle,
            rank,
            project: ProjectOptions::default(),
            mode: SpectrumMode::Dense,
            fd_step: 1e-4,
            exec: Exec::Sequential,
        }
    }

    fn lambda1_at(&self, v: &Vector) -> Result<f64> {
        let (phi, _) = gf_project(v, self.oracle, &self.project)?;
        Ok(spectrum_at(self.oracle, &phi, 1, &self.mode, Exec::Sequential)?.lambda1)
    }
}

impl<O: LossOracle + ?Sized> SharpnessField for FdSharpnessField<'_, O> {
    fn grad_log_sharpness(&self, zeta: &Vector) -> Result<Vector> {
        let point = manifold_point(self.oracle, zeta.clone(), self.rank, &self.mode, self.exec)?;
        let basis = point.tangent_basis();
        let s = self.fd_step;
        let comps = self.exec.try_map(basis.ncols(), |i| {
            let b = basis.column(i);
            let lp = self.lambda1_at(&normalize(&(zeta + b * s))?)?;
            let lm = self.lambda1_at(&normalize(&(zeta - b * s))?)?;
            if !(lp > 0.0 && lm > 0.0) {
                return Err(Error::Infeasible("finite-difference probe left the basin".into()));
            }
            Ok::<f64, Error>((lp.ln() - lm.ln()) / (2.0 * s))
        })?;
        Ok(&basis * Vector::from_vec(comps))
    }

    fn retract(&self, v: &Vector) -> Result<Vector> {
        Ok(gf_project(v, self.oracle, &self.project)?.0)
    }

    fn log_sharpness(&self, zeta: &Vector) -> Result<f64> {
        Ok(spectrum_at(self.oracle, zeta, 1, &self.mode, Exec::Sequential)?.lambda1.ln())
    }
}

/// Closed-form geometry of linear regression with BN.
///
/// On `Γ`, `λ₁ = 2σy²λ₁(Σx − zzᵀ)/(θᵀΣxθ)` and the Hessian null space
/// `null(Σx − zzᵀ)` depends on the data only, so
/// `∇_Γ log λ₁(θ) = (I − θθᵀ)P₀·(−2Σxθ/(θᵀΣxθ))`.
#[derive(Debug, Clone)]
pub struct LinRegManifold<'a> {
    pub problem: &'a LinRegBNProblem,
    /// Orthonormal basis of `null(Σx − zzᵀ)`.
    null_basis: Matrix,
    top_eig: f64,
    pub project: ProjectOptions,
}

impl<'a> LinRegManifold<'a> {
    pub fn new(problem: &'a LinRegBNProblem) -> Result<Self> {
        let d = problem.dim();
        let rank = linreg_rank(problem);
        let m = problem.sigma_x() - problem.z() * problem.z().transpose();
        let (vals, vecs) = sym_eigen_desc(&m);
        if rank == 0 || rank >= d || !(vals[rank - 1] > 1e-10 * vals[0]) {
            return Err(Error::GapTooSmall(format!("Σx − zzᵀ does not have rank {rank}")));
        }
        let null_basis = vecs.columns(rank, d - rank).into_owned();
        Ok(Self { problem, null_basis, top_eig: vals[0], project: ProjectOptions::default() })
    }

    pub fn rank(&self) -> usize {
        linreg_rank(self.problem)
    }

    /// `λ₁(Σx − zzᵀ)`.
    pub fn top_eigenvalue(&self) -> f64 {
        self.top_eig
    }

    /// Closed-form spherical sharpness at a unit point of `Γ`.
    pub fn sharpness(&self, theta: &Vector) -> Result<f64> {
        let (wt, _) = self.problem.effective_params(theta)?;
        Ok(2.0 * wt.norm_squared() * self.top_eig * theta.norm_squared())
    }

    pub fn tangent(&self, theta: &Vector, v: &Vector) -> Vector {
        let p0v = &self.null_basis * self.null_basis.tr_mul(v);
        sphere_tangent(theta, &p0v)
    }
}

impl SharpnessField for LinRegManifold<'_> {
    fn grad_log_sharpness(&self, zeta: &Vector) -> Result<Vector> {
        let th = normalize(zeta)?;
        let sth = self.problem.sigma_x() * &th;
        let q = th.dot(&sth);
        Ok(self.tangent(&th, &(sth * (-2.0 / q))))
    }

    fn retract(&self, v: &Vector) -> Result<Vector> {
        Ok(gf_project(v, self.problem, &self.project)?.0)
    }

    fn log_sharpness(&self, zeta: &Vector) -> Result<f64> {
        Ok(self.sharpness(&normalize(zeta)?)?.ln())
    }
}

/// `∇_Γ log λ₁` at `point` by central differences with step `fd_step`.
pub fn grad_log_sharpness<O: LossOracle + ?Sized>(point: &ManifoldPoint, oracle: &O, fd_step: f64) -> Result<Vector> {
    let mut f = FdSharpnessField::new(oracle, point.rank);
    f.fd_step = fd_step;
    f.grad_log_sharpness(&point.phi)
}

/// Hessian rank of linear regression with BN on `Γ`: `n − 2` for generic
/// data with `d ≥ n`.
pub fn linreg_rank(problem: &LinRegBNProblem) -> usize {
    (problem.n() - 2).min(problem.dim() - 1)
}

/// State of the sharpness-reduction flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub zeta: Vector,
    pub tau: f64,
    pub c_b: f64,
}

impl FlowState {
    pub fn new(zeta: Vector, c_b: f64) -> Self {
        Self { zeta, tau: 0.0, c_b }
    }
}

/// Right-hand side `−∇/(4 + (2/C_b)‖∇‖²)` at `zeta`.
pub fn flow_rhs<F: SharpnessField + ?Sized>(field: &F, zeta: &Vector, c_b: f64) -> Result<Vector> {
    let g = field.grad_log_sharpness(zeta)?;
    let denom = 4.0 + (2.0 / c_b) * g.norm_squared();
    Ok(g / (-denom))
}

/// One RK4 step of the flow; every stage point and the result are
/// retracted (normalised, then projected onto `Γ`).
pub fn flow_step<F: SharpnessField + ?Sized>(state: &FlowState, dtau: f64, field: &F) -> Result<FlowState> {
    let z = &state.zeta;
    let stage = |k: &Vector, h: f64| -> Result<Vector> { field.retract(&normalize(&(z + k * h))?) };
    let k1 = flow_rhs(field, z, state.c_b)?;
    let k2 = flow_rhs(field, &stage(&k1, dtau / 2.0)?, state.c_b)?;
    let k3 = flow_rhs(field, &stage(&k2, dtau / 2.0)?, state.c_b)?;
    let k4 = flow_rhs(field, &stage(&k3, dtau)?, state.c_b)?;
    let dz = (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dtau / 6.0);
    if dz.norm() == 0.0 {
        return Ok(FlowState { tau: state.tau + dtau, ..state.clone() });
    }
    let zeta = field.retract(&normalize(&(z + dz))?)?;
    Ok(FlowState { zeta, tau: state.tau + dtau, c_b: state.c_b })
}

/// Integrates the flow from `state` to time `tau_end` with steps of at
/// most `dtau`, calling `visit` after every step.
pub fn integrate_flow<F: SharpnessField + ?Sized>(
    state: &FlowState,
    tau_end: f64,
    dtau: f64,
    field: &F,
    visit: &mut dyn FnMut(&FlowState) -> Result<()>,
) -> Result<FlowState> {
    if !(dtau > 0.0) {
        return Err(Error::InvalidHyperparameters(format!("dτ must be positive, got {dtau}")));
    }
    let mut s = state.clone();
    while s.tau < tau_end {
        let h = dtau.min(tau_end - s.tau);
        if h <= 1e-15 * tau_end.abs().max(1.0) {
            break;
        }
        s = flow_step(&s, h, field)?;
        visit(&s)?;
    }
    Ok(s)
}

/// Linear interpolation of a flow trajectory recorded at increasing times,
/// renormalised onto the sphere.
pub fn interpolate_path(path: &[(f64, Vector)], tau: f64) -> Result<Vector> {
    if path.is_empty() {
        return Err(Error::Infeasible("empty flow path".into()));
    }
    let i = path.partition_point(|(t, _)| *t < tau);
    if i == 0 {
        return Ok(path[0].1.clone());
    }
    if i == path.len() {
        return Ok(path[path.len() - 1].1.clone());
    }
    let (t0, a) = &path[i - 1];
    let (t1, b) = &path[i];
    let s = (tau - t0) / (t1 - t0);
    normalize(&(a * (1.0 - s) + b * s))
}

/// Minimum-norm interpolator of `(x, y)`: `w* = X̃⁺ỹ` on centred data and
/// `b* = μy − w*ᵀμx`.
pub fn min_norm_solution(x: &Matrix, y: &Vector) -> Result<(Vector, f64)> {
    let n = x.nrows();
    if n == 0 || y.len() != n {
        return Err(Error::LengthMismatch(format!("{} targets for {n} inputs", y.len())));
    }
    let nf = n as f64;
    let mu_x = x.row_sum().transpose() / nf;
    let mu_y = y.sum() / nf;
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= mu_x.transpose();
    }
    let yc = y.map(|v| v - mu_y);
    let scale = xc.norm().max(f64::MIN_POSITIVE);
    let pinv = xc.clone().pseudo_inverse(1e-12 * scale).map_err(|e| Error::Infeasible(e.to_string()))?;
    let w = pinv * &yc;
    let res = (&xc * &w - &yc).amax();
    if res > 1e-10 * (1.0 + yc.amax()) {
        return Err(Error::Infeasible(format!("targets are not interpolable (residual {res:e})")));
    }
    let b = mu_y - w.dot(&mu_x);
    Ok((w, b))
}

/// [`min_norm_solution`] on a problem's training set.
pub fn min_norm_oracle(problem: &LinRegBNProblem) -> Result<(Vector, f64)> {
    min_norm_solution(problem.x(), problem.y())
}

/// The closed-form Hessian `2‖w̃‖²(Σx − zzᵀ)` at a point of `Γ`.
pub fn linreg_hessian_on_manifold(problem: &LinRegBNProblem, w: &Vector) -> Result<Matrix> {
    let r = problem.membership_residual(w)?;
    if r > 1e-6 {
        return Err(Error::Domain(format!("point is off the minimizer manifold (residual {r:e})")));
    }
    problem.closed_form_hessian(w)
}

/// A unit point of `Γ`: the min-norm direction plus a null-space
/// perturbation `δ` with `X̃δ = 0`.
pub fn linreg_point_on_manifold(problem: &LinRegBNProblem, delta: &Vector) -> Result<Vector> {
    let (w_star, _) = min_norm_oracle(problem)?;
    let xc = problem.centered_x();
    let pinv = xc.clone().pseudo_inverse(1e-12 * xc.norm()).map_err(|e| Error::Infeasible(e.to_string()))?;
    let null_part = delta - &pinv * (xc * delta);
    normalize(&(w_star + null_part))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, gaussian_vector, random_orthogonal, rel_frobenius, rng};
    use crate::silo::{fd, Example3DProblem};

    fn problem(seed: u64) -> LinRegBNProblem {
        let mut r = rng(seed);
        let x = gaussian_matrix(&mut r, 20, 40) * 0.5;
        let wgt = gaussian_vector(&mut r, 40);
        let y = &x * &wgt + Vector::from_element(20, 0.1);
        LinRegBNProblem::new(x, y, Matrix::zeros(0, 40), Vector::zeros(0)).unwrap()
    }

    fn ex3d(seed: u64) -> Example3DProblem {
        let mut r = rng(seed);
        Example3DProblem::new(random_orthogonal(&mut r, 3)).unwrap()
    }

    #[test]
    fn min_norm_worked_instance() {
        let x = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let y = Vector::from_vec(vec![1.0, -1.0]);
        let (w, b) = min_norm_solution(&x, &y).unwrap();
        assert!((w - Vector::from_vec(vec![1.0, -1.0])).norm() < 1e-12);
        assert!(b.abs() < 1e-12);
    }

    #[test]
    fn min_norm_constant_targets() {
        let mut r = rng(61);
        let x = gaussian_matrix(&mut r, 5, 8);
        let y = Vector::from_element(5, 2.5);
        let (w, b) = min_norm_solution(&x, &y).unwrap();
        assert!(w.norm() < 1e-12);
        assert!((b - 2.5).abs() < 1e-12);
    }

    #[test]
    fn min_norm_is_feasible_and_minimal() {
        let p = problem(62);
        let (w, b) = min_norm_oracle(&p).unwrap();
        let res = (p.x() * &w + Vector::from_element(20, b) - p.y()).amax();
        assert!(res <= 1e-10);
        let xc = p.centered_x();
        let pinv = xc.clone().pseudo_inverse(1e-12).unwrap();
        let mut r = rng(63);
        for _ in 0..100 {
            let d = gaussian_vector(&mut r, 40);
            let delta = &d - &pinv * (xc * &d);
            assert!((xc * &delta).amax() < 1e-10);
            assert!((&w + &delta).norm() > w.norm());
        }
    }

    #[test]
    fn manifold_points_and_closed_form_hessian() {
        let p = problem(64);
        let mut r = rng(65);
        let th = linreg_point_on_manifold(&p, &gaussian_vector(&mut r, 40)).unwrap();
        assert!(p.membership_residual(&th).unwrap() < 1e-10);
        assert!(p.value(&th).unwrap() < 1e-20);
        let h = linreg_hessian_on_manifold(&p, &th).unwrap();
        let hd = fd::dense_hessian(&p, &th, Exec::Sequential).unwrap();
        assert!(rel_frobenius(&hd, &h) <= 1e-5);
        let (vals, _) = sym_eigen_desc(&h);
        assert!(vals[39] >= -1e-8);
        let s = crate::spectra::spherical_sharpness(&p, &th, &LanczosOptions::default()).unwrap();
        assert!((s - vals[0]).abs() <= 1e-4 * vals[0]);
        assert!(linreg_hessian_on_manifold(&p, &normalize(&gaussian_vector(&mut r, 40)).unwrap()).is_err());
    }

    #[test]
    fn projection_fixed_point_and_membership() {
        let p = problem(66);
        let mut r = rng(67);
        let th = linreg_point_on_manifold(&p, &gaussian_vector(&mut r, 40)).unwrap();
        let (phi, steps) = gf_project(&th, &p, &ProjectOptions::default()).unwrap();
        assert_eq!(steps, 0);
        assert!((&phi - &th).norm() < 1e-8);
        let lm = LinRegManifold::new(&p).unwrap();
        let near = normalize(&(&th + gaussian_vector(&mut r, 40) * 1e-3)).unwrap();
        let opts = ProjectOptions { inner_lr: 0.5 / lm.sharpness(&th).unwrap(), ..Default::default() };
        let (phi, _) = gf_project(&near, &p, &opts).unwrap();
        assert!(p.membership_residual(&phi).unwrap() < 1e-6);
    }

    #[test]
    fn example3d_projection_lands_on_arc() {
        let p = ex3d(68);
        let th = normalize(&p.from_f_coords(&Vector::from_vec(vec![0.5, 0.8, 0.3]))).unwrap();
        let opts = ProjectOptions { inner_lr: 0.02, ..Default::default() };
        let (phi, _) = gf_project(&th, &p, &opts).unwrap();
        let f = p.to_f_coords(&phi);
        assert!((f[0] - f[1]).abs() < 1e-6 && f[0] > 0.0);
    }

    #[test]
    fn example3d_tangent_is_the_arc_direction() {
        let p = ex3d(69);
        let pt = manifold_point(&p, p.zeta_star(), 1, &SpectrumMode::Dense, Exec::Sequential).unwrap();
        let mut r = rng(70);
        let v = gaussian_vector(&mut r, 3);
        let t = tangent_project(&pt, &v, 1e-3).unwrap();
        let ez = p.from_f_coords(&Vector::from_vec(vec![0.0, 0.0, 1.0]));
        let expect = &ez * ez.dot(&v);
        assert!((t - expect).norm() < 1e-8);
        assert!(tangent_project(&pt, &pt.phi, 1e-3).unwrap().norm() < 1e-9);
        assert!(tangent_project(&pt, &pt.spectrum.v1, 1e-3).unwrap().norm() < 1e-8);
    }

    #[test]
    fn example3d_flattest_point_is_stationary() {
        let p = ex3d(71);
        let pt = manifold_point(&p, p.zeta_star(), 1, &SpectrumMode::Dense, Exec::Sequential).unwrap();
        let g = grad_log_sharpness(&pt, &p, 1e-4).unwrap();
        assert!(g.norm() < 1e-4, "{}", g.norm());
        let off = manifold_point(&p, p.minimizer_at(0.4), 1, &SpectrumMode::Dense, Exec::Sequential).unwrap();
        let g = grad_log_sharpness(&off, &p, 1e-4).unwrap();
        // log λ₁ = log 6 − log(1 − z²) along the arc
        assert!((g.norm() - 2.0 * 0.4 / (1.0 - 0.16) * (1.0 - 0.16f64).sqrt()).abs() < 1e-4);
    }

    #[test]
    fn linreg_fd_field_matches_analytic() {
        let p = problem(72);
        let lm = LinRegManifold::new(&p).unwrap();
        let mut r = rng(73);
        let th = linreg_point_on_manifold(&p, &gaussian_vector(&mut r, 40)).unwrap();
        let ga = lm.grad_log_sharpness(&th).unwrap();
        let fdf = FdSharpnessField::new(&p, lm.rank());
        let gf = fdf.grad_log_sharpness(&th).unwrap();
        assert!((&ga - &gf).norm() <= 1e-3 * ga.norm(), "{} vs {}", ga.norm(), gf.norm());
        let (w_star, _) = min_norm_oracle(&p).unwrap();
        let g0 = lm.grad_log_sharpness(&normalize(&w_star).unwrap()).unwrap();
        assert!(g0.norm() < 1e-4);
        let g0 = fdf.grad_log_sharpness(&normalize(&w_star).unwrap()).unwrap();
        assert!(g0.norm() < 1e-4);
    }

    #[test]
    fn observables_vanish_on_manifold_and_track_top_direction() {
        let p = problem(74);
        let mut r = rng(75);
        let th = linreg_point_on_manifold(&p, &gaussian_vector(&mut r, 40)).unwrap();
        let pt = manifold_point(&p, th.clone(), linreg_rank(&p), &SpectrumMode::Dense, Exec::Sequential).unwrap();
        let v_tilde = (pt.spectrum.lambda1 / 2.0).powi(2);
        let o = extract_observables(&th, v_tilde, 0.01, &pt);
        assert_eq!(o.h, 0.0);
        assert!(o.u.abs() < 1e-12);
        assert_eq!(o.misalignment, 0.0);
        let eps = 1e-4;
        let moved = normalize(&(&th + &pt.spectrum.v1 * eps)).unwrap();
        let o = extract_observables(&moved, v_tilde, 0.01, &pt);
        assert!((o.h - eps).abs() < 1e-6 * eps);
        assert!(o.misalignment < 10.0 * eps * eps);
    }

    #[test]
    fn flow_is_stationary_at_min_norm_and_reduces_sharpness() {
        let p = problem(76);
        let lm = LinRegManifold::new(&p).unwrap();
        let (w_star, _) = min_norm_oracle(&p).unwrap();
        let zs = normalize(&w_star).unwrap();
        let s = flow_step(&FlowState::new(zs.clone(), 2.0), 0.1, &lm).unwrap();
        assert!((s.zeta - &zs).norm() < 1e-8);
        let mut r = rng(77);
        let z0 = linreg_point_on_manifold(&p, &(gaussian_vector(&mut r, 40) * 0.5)).unwrap();
        let mut prev = lm.log_sharpness(&z0).unwrap();
        let mut st = FlowState::new(z0, 2.0);
        for _ in 0..20 {
            st = flow_step(&st, 0.05, &lm).unwrap();
            let cur = lm.log_sharpness(&st.zeta).unwrap();
            assert!(cur <= prev + 1e-10);
            assert!(p.membership_residual(&st.zeta).unwrap() < 1e-6);
            prev = cur;
        }
    }

    #[test]
    fn interpolation_is_exact_at_nodes() {
        let a = Vector::from_vec(vec![1.0, 0.0]);
        let b = Vector::from_vec(vec![0.0, 1.0]);
        let path = vec![(0.0, a.clone()), (1.0, b.clone())];
        assert_eq!(interpolate_path(&path, 0.0).unwrap(), a);
        assert_eq!(interpolate_path(&path, 2.0).unwrap(), b);
        let m = interpolate_path(&path, 0.5).unwrap();
        assert!((m[0] - m[1]).abs() < 1e-15 && (m.norm() - 1.0).abs() < 1e-15);
    }
}
