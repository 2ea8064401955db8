//! The discrete `N`-particle system.
//!
//! The index-3 constrained system is integrated in its index-reduced form
//!
//! ```text
//! m_eff ṡ = −γ_r r + (N_real/N) Σ G_rᵀ γ_q Q_i,     ṙ = s,     Q̇_j = −G_r s,
//! ```
//!
//! and the constrained formulation is recovered afterwards: the multipliers
//! follow in closed form from the accelerations, and the position- and
//! velocity-level constraints are monitored as residuals.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::model::{MacroState, ModelParams, ParticleEnsemble};
use crate::ode::{self, SolverOptions, SolverStats};

/// Number of output samples used when none is specified.
pub const DEFAULT_SAMPLES: usize = 601;

/// Time derivative of a `(MacroState, ParticleEnsemble)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroDerivative {
    pub dr: DVector<f64>,
    pub ds: DVector<f64>,
    pub dq: Vec<f64>,
}

/// Constraint residuals at one sample.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Residuals {
    /// `max_j ‖Q_j + G_r r − q_j^in − G_r r^in‖`
    pub index3: f64,
    /// `max_j ‖Q̇_j + G_r s‖`
    pub index2: f64,
}

/// Ensemble statistics kept at every sample even when the ensemble is not.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub mean: DVector<f64>,
    /// Trace of the (biased) empirical covariance.
    pub variance: f64,
    /// `(1/N) Σ Q_jᵀ γ_q Q_j`
    pub quad_mean: f64,
}

#[derive(Debug, Clone)]
pub struct MicroTrajectory {
    pub times: Vec<f64>,
    pub macro_states: Vec<MacroState>,
    pub accelerations: Vec<DVector<f64>>,
    pub summaries: Vec<EnsembleSummary>,
    pub residuals: Vec<Residuals>,
    pub ensembles: Option<Vec<ParticleEnsemble>>,
    pub multipliers: Option<Vec<Vec<f64>>>,
    pub initial_macro: MacroState,
    pub initial_ensemble: ParticleEnsemble,
    pub stats: SolverStats,
}

impl MicroTrajectory {
    pub fn r_series(&self, component: usize) -> Vec<f64> {
        self.macro_states.iter().map(|m| m.r[component]).collect()
    }

    pub fn max_residuals(&self) -> Residuals {
        self.residuals.iter().fold(Residuals::default(), |acc, r| Residuals {
            index3: acc.index3.max(r.index3),
            index2: acc.index2.max(r.index2),
        })
    }
}

/// Kinetic and potential energies per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub times: Vec<f64>,
    pub t_r: Vec<f64>,
    pub t_q: Vec<f64>,
    pub u_r: Vec<f64>,
    pub u_q: Vec<f64>,
    pub e_total: Vec<f64>,
}

impl EnergyReport {
    pub(crate) fn with_capacity(n: usize) -> Self {
        Self {
            times: Vec::with_capacity(n),
            t_r: Vec::with_capacity(n),
            t_q: Vec::with_capacity(n),
            u_r: Vec::with_capacity(n),
            u_q: Vec::with_capacity(n),
            e_total: Vec::with_capacity(n),
        }
    }

    pub(crate) fn push(&mut self, t: f64, t_r: f64, t_q: f64, u_r: f64, u_q: f64) {
        self.times.push(t);
        self.t_r.push(t_r);
        self.t_q.push(t_q);
        self.u_r.push(u_r);
        self.u_q.push(u_q);
        self.e_total.push(t_r + t_q + u_r + u_q);
    }

    /// `max_t |E(t) − E(0)| / |E(0)|`.
    pub fn relative_drift(&self) -> f64 {
        let e0 = self.e_total[0];
        self.e_total.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max) / e0.abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicroOptions {
    pub solver: SolverOptions,
    pub samples: usize,
    pub keep_ensembles: bool,
    pub keep_multipliers: bool,
}

impl Default for MicroOptions {
    fn default() -> Self {
        Self { solver: SolverOptions::default(), samples: DEFAULT_SAMPLES, keep_ensembles: false, keep_multipliers: false }
    }
}

/// Right-hand side with the parameter-dependent matrices precomputed.
pub(crate) struct MicroRhs {
    n_r: usize,
    n_q: usize,
    m_eff_inv: DMatrix<f64>,
    gamma_r: DMatrix<f64>,
    // (N_real/N) G_rᵀ γ_q
    coupling: DMatrix<f64>,
    g_r: DMatrix<f64>,
}

impl MicroRhs {
    pub(crate) fn new(p: &ModelParams) -> Self {
        Self {
            n_r: p.n_r(),
            n_q: p.n_q(),
            m_eff_inv: p.effective_mass_inv().clone(),
            gamma_r: p.gamma_r().clone(),
            coupling: p.particle_scale() * p.g_r().transpose() * p.gamma_q(),
            g_r: p.g_r().clone(),
        }
    }

    pub(crate) fn eval(&self, y: &[f64], dy: &mut [f64]) {
        let (n_r, n_q) = (self.n_r, self.n_q);
        let r = DVector::from_column_slice(&y[..n_r]);
        let s = DVector::from_column_slice(&y[n_r..2 * n_r]);
        let mut q_sum = DVector::zeros(n_q);
        for chunk in y[2 * n_r..].chunks_exact(n_q) {
            for (k, x) in chunk.iter().enumerate() {
                q_sum[k] += x;
            }
        }
        let force = -(&self.gamma_r * &r) + &self.coupling * q_sum;
        let acc = &self.m_eff_inv * force;
        let vq = -(&self.g_r * &s);
        dy[..n_r].copy_from_slice(s.as_slice());
        dy[n_r..2 * n_r].copy_from_slice(acc.as_slice());
        for chunk in dy[2 * n_r..].chunks_exact_mut(n_q) {
            chunk.copy_from_slice(vq.as_slice());
        }
    }
}

fn check_state(p: &ModelParams, m: &MacroState, ens: &ParticleEnsemble) -> Result<()> {
    if m.r.len() != p.n_r() || m.s.len() != p.n_r() {
        return Err(invalid(format!("macro state must have length n_r = {}", p.n_r())));
    }
    if ens.n_q() != p.n_q() || ens.len() != p.n() {
        return Err(invalid(format!(
            "ensemble must hold N = {} particles of dimension {}, got {} of dimension {}",
            p.n(),
            p.n_q(),
            ens.len(),
            ens.n_q()
        )));
    }
    Ok(())
}

fn pack(m: &MacroState, ens: &ParticleEnsemble) -> Vec<f64> {
    let mut y = Vec::with_capacity(2 * m.r.len() + ens.as_slice().len());
    y.extend_from_slice(m.r.as_slice());
    y.extend_from_slice(m.s.as_slice());
    y.extend_from_slice(ens.as_slice());
    y
}

/// Derivative of the index-reduced system at the given state.
pub fn ode_rhs(p: &ModelParams, m: &MacroState, ens: &ParticleEnsemble) -> Result<MicroDerivative> {
    check_state(p, m, ens)?;
    let y = pack(m, ens);
    let mut dy = vec![0.0; y.len()];
    MicroRhs::new(p).eval(&y, &mut dy);
    let n_r = p.n_r();
    Ok(MicroDerivative {
        dr: DVector::from_column_slice(&dy[..n_r]),
        ds: DVector::from_column_slice(&dy[n_r..2 * n_r]),
        dq: dy[2 * n_r..].to_vec(),
    })
}

/// Multipliers `λ_j = −γ_q Q_j + M_q G_r ṡ` in the per-realistic-particle
/// convention (the multiplier of the scaled system is `(N_real/N)·λ_j`).
pub fn recover_multipliers(p: &ModelParams, ens: &ParticleEnsemble, s_dot: &DVector<f64>) -> Vec<f64> {
    let inertial = p.m_q() * p.g_r() * s_dot;
    let mut lambda = Vec::with_capacity(ens.as_slice().len());
    for j in 0..ens.len() {
        let q = DVector::from_column_slice(ens.particle(j));
        lambda.extend((-(p.gamma_q() * q) + &inertial).iter());
    }
    lambda
}

/// Largest violation of the constrained balance laws
///
/// ```text
/// M_r ṡ = −γ_r r − (N_real/N) Σ G_rᵀ λ_j,     M_q Q̈_j = −γ_q Q_j − λ_j,   Q̈_j = −G_r ṡ,
/// ```
///
/// for given accelerations and multipliers.
pub fn balance_residual(p: &ModelParams, m: &MacroState, ens: &ParticleEnsemble, s_dot: &DVector<f64>, lambda: &[f64]) -> f64 {
    let n_q = p.n_q();
    let mut lam_sum = DVector::zeros(n_q);
    for chunk in lambda.chunks_exact(n_q) {
        for (k, x) in chunk.iter().enumerate() {
            lam_sum[k] += x;
        }
    }
    let macro_res = p.m_r() * s_dot + p.gamma_r() * &m.r + p.particle_scale() * p.g_r().transpose() * lam_sum;
    let q_acc = -(p.g_r() * s_dot);
    let inertial = p.m_q() * &q_acc;
    let mut worst = macro_res.amax();
    for (j, lam) in lambda.chunks_exact(n_q).enumerate() {
        let q = DVector::from_column_slice(ens.particle(j));
        let res = &inertial + p.gamma_q() * q + DVector::from_column_slice(lam);
        worst = worst.max(res.amax());
    }
    worst
}

fn residuals_at(
    p: &ModelParams,
    rhs: &MicroRhs,
    y: &[f64],
    r_in: &DVector<f64>,
    q_in: &ParticleEnsemble,
    dy: &mut [f64],
) -> Residuals {
    let (n_r, n_q) = (p.n_r(), p.n_q());
    let r = DVector::from_column_slice(&y[..n_r]);
    let s = DVector::from_column_slice(&y[n_r..2 * n_r]);
    let offset = p.g_r() * (r - r_in);
    let gs = p.g_r() * s;
    rhs.eval(y, dy);
    let mut res = Residuals::default();
    for (j, (q, dq)) in y[2 * n_r..].chunks_exact(n_q).zip(dy[2 * n_r..].chunks_exact(n_q)).enumerate() {
        let q0 = q_in.particle(j);
        let mut pos = 0.0;
        let mut vel = 0.0;
        for k in 0..n_q {
            pos += (q[k] + offset[k] - q0[k]).powi(2);
            vel += (dq[k] + gs[k]).powi(2);
        }
        res.index3 = res.index3.max(pos.sqrt());
        res.index2 = res.index2.max(vel.sqrt());
    }
    res
}

fn summarize(p: &ModelParams, q: &[f64]) -> EnsembleSummary {
    let n_q = p.n_q();
    let gamma_q = p.gamma_q();
    let n = (q.len() / n_q) as f64;
    let mut mean = DVector::zeros(n_q);
    for chunk in q.chunks_exact(n_q) {
        for (k, x) in chunk.iter().enumerate() {
            mean[k] += x;
        }
    }
    mean /= n;
    let mut variance = 0.0;
    let mut quad = 0.0;
    for chunk in q.chunks_exact(n_q) {
        for (k, x) in chunk.iter().enumerate() {
            variance += (x - mean[k]).powi(2);
            quad += x * (0..n_q).map(|l| gamma_q[(k, l)] * chunk[l]).sum::<f64>();
        }
    }
    EnsembleSummary { mean, variance: variance / n, quad_mean: quad / n }
}

/// Integrates the discrete system on `[0, t_end]` with `opts.samples`
/// equidistant output samples.
pub fn integrate_micro(
    p: &ModelParams,
    init: &MacroState,
    q_in: &ParticleEnsemble,
    t_end: f64,
    opts: &MicroOptions,
) -> Result<MicroTrajectory> {
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(invalid(format!("t_end must be finite and nonnegative, got {t_end}")));
    }
    integrate_micro_at(p, init, q_in, &ode::uniform_times(t_end, opts.samples), opts)
}

/// As [`integrate_micro`] with explicit output times starting at 0.
pub fn integrate_micro_at(
    p: &ModelParams,
    init: &MacroState,
    q_in: &ParticleEnsemble,
    times: &[f64],
    opts: &MicroOptions,
) -> Result<MicroTrajectory> {
    check_state(p, init, q_in)?;
    if times.first() != Some(&0.0) {
        return Err(invalid("output times must start at 0"));
    }
    let rhs = MicroRhs::new(p);
    let y0 = pack(init, q_in);
    let out = ode::integrate(|_, y, dy| rhs.eval(y, dy), &y0, times, &opts.solver)?;

    let n_r = p.n_r();
    let n = times.len();
    let mut macro_states = Vec::with_capacity(n);
    let mut accelerations = Vec::with_capacity(n);
    let mut summaries = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    let mut ensembles = opts.keep_ensembles.then(|| Vec::with_capacity(n));
    let mut multipliers = opts.keep_multipliers.then(|| Vec::with_capacity(n));
    let mut dy = vec![0.0; y0.len()];
    for y in &out.states {
        let res = residuals_at(p, &rhs, y, &init.r, q_in, &mut dy);
        let m = MacroState { r: DVector::from_column_slice(&y[..n_r]), s: DVector::from_column_slice(&y[n_r..2 * n_r]) };
        let acc = DVector::from_column_slice(&dy[n_r..2 * n_r]);
        let q = &y[2 * n_r..];
        summaries.push(summarize(p, q));
        if multipliers.is_some() || ensembles.is_some() {
            let ens = ParticleEnsemble::new(p.n_q(), q.to_vec())?;
            if let Some(ms) = multipliers.as_mut() {
                ms.push(recover_multipliers(p, &ens, &acc));
            }
            if let Some(es) = ensembles.as_mut() {
                es.push(ens);
            }
        }
        residuals.push(res);
        macro_states.push(m);
        accelerations.push(acc);
    }
    Ok(MicroTrajectory {
        times: out.times,
        macro_states,
        accelerations,
        summaries,
        residuals,
        ensembles,
        multipliers,
        initial_macro: init.clone(),
        initial_ensemble: q_in.clone(),
        stats: out.stats,
    })
}

/// Recomputes the constraint residuals from the stored ensembles.
pub fn constraint_residuals(p: &ModelParams, traj: &MicroTrajectory) -> Result<Vec<Residuals>> {
    let ensembles = traj
        .ensembles
        .as_ref()
        .ok_or_else(|| invalid("trajectory was integrated without keeping the ensembles"))?;
    let rhs = MicroRhs::new(p);
    let mut dy = Vec::new();
    Ok(traj
        .macro_states
        .iter()
        .zip(ensembles)
        .map(|(m, ens)| {
            let y = pack(m, ens);
            dy.resize(y.len(), 0.0);
            residuals_at(p, &rhs, &y, &traj.initial_macro.r, &traj.initial_ensemble, &mut dy)
        })
        .collect())
}

/// Energies of the discrete system with per-particle weight `N_real/N`.
pub fn energy_micro(p: &ModelParams, traj: &MicroTrajectory) -> EnergyReport {
    let mut report = EnergyReport::with_capacity(traj.times.len());
    for ((t, m), summary) in traj.times.iter().zip(&traj.macro_states).zip(&traj.summaries) {
        let gs = p.g_r() * &m.s;
        report.push(
            *t,
            0.5 * m.s.dot(&(p.m_r() * &m.s)),
            0.5 * p.n_real() * gs.dot(&(p.m_q() * &gs)),
            0.5 * m.r.dot(&(p.gamma_r() * &m.r)),
            0.5 * p.n_real() * summary.quad_mean,
        );
    }
    report
}

/// Closed-form solution of the scalar effective oscillator
/// `m_eff r̈ = −γ_eff (r − r₀)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplicitSolution {
    pub r0: f64,
    pub omega: f64,
    pub r_in: f64,
    pub s_in: f64,
}

impl ExplicitSolution {
    /// Returns `(r(t), ṙ(t))`.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let (sin, cos) = (self.omega * t).sin_cos();
        let a = self.r_in - self.r0;
        let b = self.s_in / self.omega;
        (self.r0 + a * cos + b * sin, self.omega * (b * cos - a * sin))
    }
}

/// `mu_in_mean` is the mean of the initial particle distribution (the
/// empirical mean for a discrete ensemble).
pub fn explicit_solution(p: &ModelParams, r_in: f64, s_in: f64, mu_in_mean: f64) -> Result<ExplicitSolution> {
    if p.n_r() != 1 || p.n_q() != 1 {
        return Err(Error::Unsupported("explicit solution is implemented for n_r = n_q = 1".into()));
    }
    let gamma_eff = p.effective_stiffness()[(0, 0)];
    if !(gamma_eff > 0.0) {
        return Err(Error::Unsupported(format!("non-oscillatory regime: gamma_eff = {gamma_eff}")));
    }
    let m_eff = p.effective_mass()[(0, 0)];
    let r0 = p.equilibrium_from_mean(&DVector::from_element(1, r_in), &DVector::from_element(1, mu_in_mean))?[0];
    Ok(ExplicitSolution { r0, omega: (gamma_eff / m_eff).sqrt(), r_in, s_in })
}
