//! Experiment configuration and runners.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::data::{gen_example3d, gen_linreg, gen_matcom, init_near_minimizer, matcom_init, MatComShape};
use super::detect::{detect_eos_entry_at, period2_fraction, sharpness_trend};
use super::report::Report;
use super::trace::{SharpnessAt, Trace, TraceRow};
use crate::driftsim::{self, DriftState, HamiltonianParams, Window};
use crate::dynamics::{gdwd_step, run, Driver, GdwdConfig, OptState, RecordPolicy, ScalarRmsState, StepView};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::{align_sign, gaussian_vector, normalize, sub_rng, Vector};
use crate::manifold::{
    extract_observables, gf_project_adaptive, linreg_point_on_manifold, linreg_rank, min_norm_oracle, ManifoldPoint,
    ProjectOptions,
};
use crate::sched::{gwsi_from_gdwd, quasi_rmsprop_params};
use crate::silo::{Example3DProblem, LinRegBNProblem, LossOracle, MatComBNProblem};
use crate::spectra::{dense_hessian_spectrum, dense_spectrum, spherical_sharpness, LanczosOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Linreg,
    Matcom,
    Example3d,
    Driftsim,
    Check,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedKind {
    #[default]
    Gdwd,
    /// Scalar RMSprop on the direction with quasi-RMSprop hyperparameters.
    ScalarRms,
}

/// Parameters of a frozen-gradient drift simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftOptions {
    pub c_b: f64,
    pub grad_norm_sq: f64,
    pub h0: f64,
    pub u0: f64,
}

impl Default for DriftOptions {
    fn default() -> Self {
        Self { c_b: 1.0, grad_norm_sq: 2.0, h0: 0.3, u0: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Learning rate `η̂`; the base rate `η` for `driftsim`.
    pub eta_hat: f64,
    pub lambda_hat: f64,
    pub steps: u64,
    pub seed: u64,
    pub record_every: u64,
    /// Cadence of projection and spectrum observables.
    pub project_every: u64,
    /// Every step up to this one is recorded with the sharpness at `θ`.
    pub dense_until: u64,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
    pub sched: SchedKind,
    pub drift: DriftOptions,
}

/// Step at which the default linear-regression run is calibrated to reach
/// the edge of stability.
pub const LINREG_EOS_TARGET_STEP: f64 = 1000.0;
/// Loss threshold of the projection `Φ` in the harness.
pub const HARNESS_PROJECT_TOL: f64 = 1e-20;
/// Norm of the Gaussian matrix-completion initialisation.
pub const MATCOM_INIT_NORM: f64 = 1.0;

impl ExperimentConfig {
    pub fn default_for(kind: ExperimentKind) -> Self {
        let base = Self {
            kind,
            eta_hat: 0.5,
            lambda_hat: 2e-4,
            steps: 100_000,
            seed: 0,
            record_every: 25,
            project_every: 25,
            dense_until: 2000,
            out: None,
            format: OutputFormat::Csv,
            sched: SchedKind::Gdwd,
            drift: DriftOptions::default(),
        };
        match kind {
            ExperimentKind::Linreg | ExperimentKind::Check => base,
            ExperimentKind::Matcom => Self {
                eta_hat: 0.1,
                lambda_hat: 0.01,
                steps: 200_000,
                record_every: 100,
                project_every: 100,
                dense_until: 0,
                ..base
            },
            ExperimentKind::Example3d => Self {
                eta_hat: 0.5,
                lambda_hat: 0.08,
                steps: 50_000,
                record_every: 1,
                project_every: 25,
                dense_until: 50_000,
                ..base
            },
            ExperimentKind::Driftsim => Self {
                eta_hat: 0.01,
                lambda_hat: 0.0,
                steps: 10_000,
                record_every: 1,
                project_every: 1,
                dense_until: 0,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.record_every == 0 || self.project_every == 0 {
            return Err(Error::InvalidHyperparameters("steps and cadences must be ≥ 1".into()));
        }
        if self.kind == ExperimentKind::Driftsim {
            HamiltonianParams::new(self.drift.c_b, self.drift.grad_norm_sq)?;
            if !(self.eta_hat > 0.0 && self.eta_hat <= driftsim::MAX_DRIFT_ETA) || self.drift.h0 == 0.0 {
                return Err(Error::InvalidHyperparameters("driftsim needs η ∈ (0, 0.1] and h₀ ≠ 0".into()));
            }
            return Ok(());
        }
        GdwdConfig::new(self.eta_hat, self.lambda_hat)?;
        if self.sched == SchedKind::ScalarRms && !(self.lambda_hat > 0.0 && 4.0 * self.eta_hat * self.lambda_hat < 1.0) {
            return Err(Error::InvalidHyperparameters("scalar-rms needs 0 < 4η̂λ̂ < 1".into()));
        }
        Ok(())
    }

    pub fn gdwd(&self) -> Result<GdwdConfig> {
        GdwdConfig::new(self.eta_hat, self.lambda_hat)
    }

    fn policy(&self) -> RecordPolicy {
        RecordPolicy { every: self.record_every, dense_until: self.dense_until }
    }

    /// `η = √(2η_in)`, the oscillation scale.
    fn osc_eta(&self) -> f64 {
        (2.0 * self.eta_hat * self.lambda_hat).sqrt()
    }
}

/// One row of a drift simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub t: u64,
    pub h: f64,
    pub u: f64,
    pub energy: f64,
}

/// Everything a run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trace: Trace,
    pub drift: Vec<DriftRow>,
    pub report: Report,
    /// Parameters after the last step.
    pub final_w: Option<Vector>,
}

/// Runs the experiment in memory.
pub fn simulate(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    match config.kind {
        ExperimentKind::Linreg => {
            let p = gen_linreg(config.seed)?;
            run_linreg(config, &p)
        }
        ExperimentKind::Matcom => {
            let s = MatComShape::default();
            let p = gen_matcom(s.d, s.rank, s.n_obs, config.seed)?;
            run_matcom(config, &p)
        }
        ExperimentKind::Example3d => {
            let (p, w0) = gen_example3d(config.seed);
            run_example3d(config, &p, &w0)
        }
        ExperimentKind::Driftsim => run_driftsim(config),
        ExperimentKind::Check => {
            let mut report = Report::new(config);
            report.checks = super::checks::run_all(config.seed);
            Ok(RunOutput { trace: Trace::default(), drift: Vec::new(), report, final_w: None })
        }
    }
}

/// Runs the experiment and, if `config.out` is set, writes its artifacts.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    let out = simulate(config)?;
    if let Some(dir) = &config.out {
        write_artifacts(dir, config.format, &out)?;
    }
    Ok(out)
}

/// Writes `trace.{csv,json}` (or `drift.{csv,json}`) and `report.json`.
pub fn write_artifacts(dir: &Path, format: OutputFormat, out: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let ext = match format {
        OutputFormat::Csv => "csv",
        OutputFormat::Json => "json",
    };
    if !out.drift.is_empty() {
        let f = BufWriter::new(File::create(dir.join(format!("drift.{ext}")))?);
        match format {
            OutputFormat::Csv => {
                let mut w = csv::Writer::from_writer(f);
                for r in &out.drift {
                    w.serialize(r)?;
                }
                w.flush()?;
            }
            OutputFormat::Json => serde_json::to_writer(f, &out.drift)?,
        }
    } else if !out.trace.is_empty() {
        let f = BufWriter::new(File::create(dir.join(format!("trace.{ext}")))?);
        match format {
            OutputFormat::Csv => out.trace.write_csv(f)?,
            OutputFormat::Json => out.trace.write_json(f)?,
        }
    }
    out.report.write_json(BufWriter::new(File::create(dir.join("report.json"))?))
}

/// Builds the optimizer and its starting point. Scalar RMSprop runs on the
/// direction with `v₀ = η²ṽ₀`, `ṽ₀` matching the GD+WD start.
fn driver_for(config: &ExperimentConfig, w0: &Vector) -> Result<(Driver, Vector)> {
    let cfg = config.gdwd()?;
    match config.sched {
        SchedKind::Gdwd => Ok((Driver::Gdwd(cfg), w0.clone())),
        SchedKind::ScalarRms => {
            let (eta, beta) = quasi_rmsprop_params(cfg.eta_in());
            let vt = gwsi_from_gdwd(cfg.eta_hat, cfg.lambda_hat, w0.norm())?.v_tilde;
            let s = ScalarRmsState::new(eta * eta * vt, eta, beta)?;
            Ok((Driver::ScalarRms(s), normalize(w0)?))
        }
    }
}

/// Runs the optimizer, turning divergence into a report entry.
fn drive<O: LossOracle + ?Sized>(
    config: &ExperimentConfig,
    oracle: &O,
    w0: &Vector,
    observer: &mut dyn FnMut(&StepView<'_>, &mut TraceRow) -> Result<()>,
) -> Result<(Trace, Option<Vector>, Option<String>)> {
    let (driver, start) = driver_for(config, w0)?;
    let mut last = None;
    let steps = config.steps;
    let mut obs = |v: &StepView<'_>, row: &mut TraceRow| -> Result<()> {
        if v.t == steps {
            last = Some(v.w.clone());
        }
        observer(v, row)
    };
    match run(&driver, oracle, &start, steps, config.policy(), &mut obs) {
        Ok(tr) => Ok((tr, last, None)),
        Err(e @ Error::NonFinite { .. }) => Ok((Trace::default(), None, Some(e.to_string()))),
        Err(Error::Observer { step, source }) if matches!(*source, Error::NonFinite { .. }) => {
            Ok((Trace::default(), None, Some(format!("step {step}: {source}"))))
        }
        Err(e) => Err(e),
    }
}

fn summarise(report: &mut Report, trace: &Trace, at: SharpnessAt, rel_tol: f64) {
    report.eos_entry_step = detect_eos_entry_at(trace, rel_tol, Some(at));
    let from = report.eos_entry_step.unwrap_or(0);
    if report.eos_entry_step.is_some() {
        report.period2_fraction = period2_fraction(trace, from);
    }
    report.sharpness_trend = sharpness_trend(trace, from);
    if let Some(r) = trace.last() {
        report.metrics.insert("final_train_loss".into(), r.train_loss);
        if let Some(v) = r.test_loss {
            report.metrics.insert("final_test_loss".into(), v);
        }
        if let Some(v) = r.dist_to_target {
            report.metrics.insert("final_dist_to_target".into(), v);
        }
    }
}

/// Relative tolerance of the EoS detector used in reports.
pub const EOS_REL_TOL: f64 = 0.05;

/// Oscillation observables around a projected point, with the top
/// eigenvector's sign kept consistent between calls.
struct OscTracker {
    prev_v1: Option<Vector>,
    eta: f64,
}

impl OscTracker {
    fn fill(&mut self, view: &StepView<'_>, mut point: ManifoldPoint, row: &mut TraceRow) {
        if let Some(prev) = &self.prev_v1 {
            align_sign(&mut point.spectrum.top_vectors[0], prev);
        }
        let o = extract_observables(view.theta, view.v_tilde, self.eta, &point);
        self.prev_v1 = Some(point.spectrum.top_vectors[0].clone());
        row.h = Some(o.h_scaled);
        row.u = Some(o.u);
        row.misalignment = Some(o.misalignment);
        row.sph_sharpness = Some(point.spectrum.lambda1);
        row.sharpness_at = Some(SharpnessAt::Phi);
    }
}

/// Sharpness `λ₁` of a unit point by dense assembly.
fn dense_sharpness<O: LossOracle + ?Sized>(oracle: &O, theta: &Vector) -> Result<f64> {
    Ok(dense_hessian_spectrum(oracle, theta, Some(1), Exec::Sequential)?.lambda1)
}

/// Steps of the pilot run used to calibrate the linear-regression start.
pub const LINREG_PILOT_STEPS: u64 = 300;

/// Step at which `2/η̃ₜ` meets `λ₁(Φ(θ_P))` after a pilot of `P` steps, from
/// the decay `‖wₜ‖² = (1−η_in)^{2(t−P)}‖w_P‖²` once the loss has vanished.
fn linreg_crossing(problem: &LinRegBNProblem, config: &GdwdConfig, w0: &Vector) -> Result<f64> {
    let mut s = OptState::new(w0.clone());
    for _ in 0..LINREG_PILOT_STEPS {
        s = gdwd_step(&s, config, problem)?;
    }
    let theta = s.theta()?;
    let opts = ProjectOptions { loss_tol: HARNESS_PROJECT_TOL, inner_lr: 0.5 / dense_sharpness(problem, &theta)?, max_inner_steps: 200_000 };
    let (phi, _) = gf_project_adaptive(&theta, problem, &opts, 4)?;
    let lam = dense_spectrum(&problem.closed_form_hessian(&phi)?, Some(1)).lambda1;
    let ratio = 2.0 / (s.eff_lr(config) * lam);
    Ok(LINREG_PILOT_STEPS as f64 + ratio.ln() / (-2.0 * (1.0 - config.eta_in()).ln()))
}

/// Perturbation scale `σ₀` of the default linear-regression start.
pub const LINREG_INIT_SIGMA: f64 = 0.1;

/// Default start for linear regression: a seeded random point `ζ₀ ∈ Γ`
/// (null-space offset `δ ~ N(0, I/D)`)
/// perturbed as in [`init_near_minimizer`] with `σ₀ =`
/// [`LINREG_INIT_SIGMA`], with the norm tuned by pilot runs so that `2/η̃ₜ`
/// reaches `λ₁(Φ(θₜ))` at [`LINREG_EOS_TARGET_STEP`].
pub fn linreg_default_init(problem: &LinRegBNProblem, config: &GdwdConfig, seed: u64) -> Result<Vector> {
    let mut r = sub_rng(seed, 7);
    let d = problem.dim();
    let zeta0 = linreg_point_on_manifold(problem, &(gaussian_vector(&mut r, d) / (d as f64).sqrt()))?;
    let lam = dense_spectrum(&problem.closed_form_hessian(&zeta0)?, Some(1)).lambda1;
    let theta = init_near_minimizer(&zeta0, LINREG_INIT_SIGMA, lam, config, 0.0, seed)?.theta()?;
    let decay = -2.0 * (1.0 - config.eta_in()).ln();
    let mut norm = config.norm_for_eff_lr(2.0 / lam) * (0.5 * decay * LINREG_EOS_TARGET_STEP).exp();
    for _ in 0..30 {
        let err = linreg_crossing(problem, config, &(&theta * norm))? - LINREG_EOS_TARGET_STEP;
        if err.abs() < 1.0 {
            break;
        }
        norm *= (-0.5 * decay * err).exp();
    }
    Ok(theta * norm)
}

pub fn run_linreg(config: &ExperimentConfig, problem: &LinRegBNProblem) -> Result<RunOutput> {
    let w0 = linreg_default_init(problem, &config.gdwd()?, config.seed)?;
    run_linreg_from(config, problem, &w0)
}

/// Linear regression from `w0`. Projection rows carry `λ₁(Φ(θ))`, `h/η`,
/// `u`, the misalignment and the distance of `(w̃, b̃)(Φ(θ))` to the
/// min-norm interpolator; other rows up to `dense_until` carry `λ₁(θ)`.
pub fn run_linreg_from(config: &ExperimentConfig, problem: &LinRegBNProblem, w0: &Vector) -> Result<RunOutput> {
    let rank = linreg_rank(problem);
    let (w_star, b_star) = min_norm_oracle(problem)?;
    let mut lr = 0.5 / dense_sharpness(problem, &normalize(w0)?)?;
    let mut osc = OscTracker { prev_v1: None, eta: config.osc_eta() };
    let (pe, du) = (config.project_every, config.dense_until);
    let mut observer = |v: &StepView<'_>, row: &mut TraceRow| -> Result<()> {
        if v.t.is_multiple_of(pe) {
            let opts = ProjectOptions { loss_tol: HARNESS_PROJECT_TOL, inner_lr: lr, max_inner_steps: 200_000 };
            let (phi, _) = gf_project_adaptive(v.theta, problem, &opts, 4)?;
            let spectrum = dense_spectrum(&problem.closed_form_hessian(&phi)?, Some(rank));
            lr = 0.5 / spectrum.lambda1;
            let (wt, bt) = problem.effective_params(&phi)?;
            row.dist_to_target = Some(((wt - &w_star).norm_squared() + (bt - b_star).powi(2)).sqrt());
            let mu = 2.0 / spectrum.lambda1;
            osc.fill(v, ManifoldPoint { phi, spectrum, mu, rank }, row);
        } else if v.t <= du {
            row.sph_sharpness = Some(dense_sharpness(problem, v.theta)?);
            row.sharpness_at = Some(SharpnessAt::Theta);
        }
        Ok(())
    };
    let (trace, final_w, diverged) = drive(config, problem, w0, &mut observer)?;
    let mut report = Report::new(config);
    report.diverged = diverged;
    summarise(&mut report, &trace, SharpnessAt::Phi, EOS_REL_TOL);
    Ok(RunOutput { trace, drift: Vec::new(), report, final_w })
}

/// Lanczos settings for matrix-completion sharpness.
pub fn matcom_lanczos() -> LanczosOptions {
    LanczosOptions { k: 40, tol: 1e-6, ..Default::default() }
}

pub fn run_matcom(config: &ExperimentConfig, problem: &MatComBNProblem) -> Result<RunOutput> {
    let w0 = matcom_init(problem, 1.0, config.seed);
    let w0 = &w0 * (MATCOM_INIT_NORM / w0.norm());
    run_matcom_from(config, problem, &w0)
}

/// Matrix completion from `w0`. Projection rows carry the spherical
/// sharpness at `θ` by Lanczos and `σ₂/σ₃` of the recovered matrix.
pub fn run_matcom_from(config: &ExperimentConfig, problem: &MatComBNProblem, w0: &Vector) -> Result<RunOutput> {
    let opts = matcom_lanczos();
    let pe = config.project_every;
    let mut observer = |v: &StepView<'_>, row: &mut TraceRow| -> Result<()> {
        if v.t.is_multiple_of(pe) || v.t == config.steps {
            row.sph_sharpness = Some(spherical_sharpness(problem, v.theta, &opts)?);
            row.sharpness_at = Some(SharpnessAt::Theta);
            let sv = problem.recovered(v.w)?.singular_values();
            row.dist_to_target = Some(sv[1] / sv[2]);
        }
        Ok(())
    };
    let (trace, final_w, diverged) = drive(config, problem, w0, &mut observer)?;
    let mut report = Report::new(config);
    report.diverged = diverged;
    summarise(&mut report, &trace, SharpnessAt::Theta, EOS_REL_TOL);
    Ok(RunOutput { trace, drift: Vec::new(), report, final_w })
}

/// The three-dimensional example. Projection rows carry `λ₁(Φ(θ))` and the
/// `z`-coordinate of `Φ(θ)`; other rows up to `dense_until` carry `λ₁(θ)`.
/// The report adds the distance of `Φ(θ_T)` to `ζ*` and its sharpness.
pub fn run_example3d(config: &ExperimentConfig, problem: &Example3DProblem, w0: &Vector) -> Result<RunOutput> {
    let mut lr = 0.5 / dense_sharpness(problem, &normalize(w0)?)?.max(1.0);
    let mut osc = OscTracker { prev_v1: None, eta: config.osc_eta() };
    let (pe, du) = (config.project_every, config.dense_until);
    let project = |theta: &Vector, lr: &mut f64| -> Result<ManifoldPoint> {
        let opts = ProjectOptions { loss_tol: HARNESS_PROJECT_TOL, inner_lr: *lr, max_inner_steps: 200_000 };
        let (phi, _) = gf_project_adaptive(theta, problem, &opts, 4)?;
        let spectrum = dense_hessian_spectrum(problem, &phi, Some(1), Exec::Sequential)?;
        *lr = 0.5 / spectrum.lambda1;
        let mu = 2.0 / spectrum.lambda1;
        Ok(ManifoldPoint { phi, spectrum, mu, rank: 1 })
    };
    let mut observer = |v: &StepView<'_>, row: &mut TraceRow| -> Result<()> {
        if v.t.is_multiple_of(pe) {
            let point = project(v.theta, &mut lr)?;
            row.dist_to_target = Some(problem.to_f_coords(&point.phi)[2]);
            osc.fill(v, point, row);
        } else if v.t <= du {
            row.sph_sharpness = Some(dense_sharpness(problem, v.theta)?);
            row.sharpness_at = Some(SharpnessAt::Theta);
        }
        Ok(())
    };
    let (trace, final_w, diverged) = drive(config, problem, w0, &mut observer)?;
    let mut report = Report::new(config);
    report.diverged = diverged;
    summarise(&mut report, &trace, SharpnessAt::Phi, EOS_REL_TOL);
    if let Some(w) = &final_w {
        let mut lr = 0.5 / 6.0;
        let point = project(&normalize(w)?, &mut lr)?;
        let zs = problem.zeta_star();
        let d = (&point.phi - &zs).norm().min((&point.phi + &zs).norm());
        report.metrics.insert("final_phi_dist_to_zeta_star".into(), d);
        report.metrics.insert("final_phi_sharpness".into(), point.spectrum.lambda1);
    }
    Ok(RunOutput { trace, drift: Vec::new(), report, final_w })
}

/// Frozen-gradient drift simulation with energy and `h²` summaries.
pub fn run_driftsim(config: &ExperimentConfig) -> Result<RunOutput> {
    let d = config.drift;
    let s0 = DriftState::frozen(d.h0, d.u0, d.grad_norm_sq);
    let traj = driftsim::simulate(&s0, config.eta_hat, d.c_b, config.steps as usize, None)?;
    let mut rows = Vec::new();
    for (t, s) in traj.iter().enumerate() {
        let t = t as u64;
        if t.is_multiple_of(config.record_every) || t == config.steps {
            rows.push(DriftRow { t, h: s.h, u: s.u, energy: driftsim::energy(s, d.c_b)? });
        }
    }
    let mut report = Report::new(config);
    let p = HamiltonianParams::new(d.c_b, d.grad_norm_sq)?;
    report.metrics.insert("energy_initial".into(), driftsim::energy(&s0, d.c_b)?);
    report.metrics.insert("energy_max_deviation".into(), driftsim::max_energy_deviation(&traj, d.c_b)?);
    report.metrics.insert("mean_h2_target".into(), p.mean_h2());
    let u: Vec<f64> = traj.iter().map(|s| s.u).collect();
    let periods = driftsim::period_boundaries(&u).len().saturating_sub(1);
    report.metrics.insert("complete_periods".into(), periods as f64);
    if let Ok(m) = driftsim::average_h2(&traj, Window::Periods { min: 1 }) {
        report.metrics.insert("mean_h2".into(), m);
    }
    Ok(RunOutput { trace: Trace::default(), drift: rows, report, final_w: None })
}
