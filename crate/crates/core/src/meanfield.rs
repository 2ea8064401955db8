//! Mean-field description of the particle system.
//!
//! In the linear setting every particle is translated by the same amount, so
//! the characteristic flow is the explicit shift `Q(t, q) = q − G_r(r(t) − r^in)`
//! and `μ_t` is the pushforward of `μ^in` under it. The macroscopic law then
//! closes on the first moment and becomes an ODE in `(r, s)` alone. The
//! transport equation `∂_t u + v ∂_q u = 0` with `v = −G_r ṙ` is also solved
//! directly with a first-order upwind scheme (method of lines).

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::measure::{trapezoid_weighted, GridDensity, Measure};
use crate::microsim::{EnergyReport, DEFAULT_SAMPLES};
use crate::model::{MacroState, ModelParams};
use crate::ode::{self, SolverOptions, SolverStats};

/// Cumulative boundary outflow above which a warning is logged.
pub const MASS_LOSS_WARN: f64 = 1e-6;

/// `Q(t, q^in) = −G_r(r − r^in) + q^in`.
pub fn characteristic_flow(p: &ModelParams, r: &DVector<f64>, r_in: &DVector<f64>, q_in: &DVector<f64>) -> DVector<f64> {
    q_in - p.g_r() * (r - r_in)
}

/// Shift `w = −G_r(r − r^in)` applied to every particle.
pub fn flow_shift(p: &ModelParams, r: &DVector<f64>, r_in: &DVector<f64>) -> DVector<f64> {
    -(p.g_r() * (r - r_in))
}

/// `μ_t = Q(t, ·)#μ^in`.
pub fn pushforward(p: &ModelParams, mu_in: &Measure, r: &DVector<f64>, r_in: &DVector<f64>) -> Result<Measure> {
    mu_in.shifted(&flow_shift(p, r, r_in))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KineticOptions {
    pub solver: SolverOptions,
    pub samples: usize,
    /// Store the grid density at every sample (transport solver only).
    pub keep_snapshots: bool,
}

impl Default for KineticOptions {
    fn default() -> Self {
        Self { solver: SolverOptions::default(), samples: DEFAULT_SAMPLES, keep_snapshots: true }
    }
}

#[derive(Debug, Clone)]
pub struct KineticTrajectory {
    pub times: Vec<f64>,
    pub macro_states: Vec<MacroState>,
    pub accelerations: Vec<DVector<f64>>,
    /// Raw first moment `∫ q dμ_t`.
    pub first_moments: Vec<DVector<f64>>,
    /// Raw second moment `∫ |q|² dμ_t`.
    pub second_moments: Vec<f64>,
    /// Total mass of `μ_t` (below one on a truncated grid).
    pub masses: Vec<f64>,
    /// Mass that has left the grid through either boundary.
    pub outflow: Vec<f64>,
    /// Most negative nodal density value at each sample (zero if none).
    pub min_density: Vec<f64>,
    pub snapshots: Option<Vec<GridDensity>>,
    pub r_in: DVector<f64>,
    pub s_in: DVector<f64>,
    pub mu_in: Measure,
    pub stats: SolverStats,
}

impl KineticTrajectory {
    /// `μ_t` at sample `k`: the stored snapshot when available, otherwise the
    /// pushforward of `μ^in`.
    pub fn measure_at(&self, p: &ModelParams, k: usize) -> Result<Measure> {
        match &self.snapshots {
            Some(s) => Ok(Measure::Grid(s[k].clone())),
            None => pushforward(p, &self.mu_in, &self.macro_states[k].r, &self.r_in),
        }
    }

    pub fn r_series(&self, component: usize) -> Vec<f64> {
        self.macro_states.iter().map(|m| m.r[component]).collect()
    }
}

fn check_macro(p: &ModelParams, r_in: &DVector<f64>, s_in: &DVector<f64>) -> Result<()> {
    if r_in.len() != p.n_r() || s_in.len() != p.n_r() {
        return Err(invalid(format!("initial macro state must have length n_r = {}", p.n_r())));
    }
    if r_in.iter().chain(s_in.iter()).any(|x| !x.is_finite()) {
        return Err(invalid("initial macro state must be finite"));
    }
    Ok(())
}

fn check_times(t_end: f64) -> Result<()> {
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(invalid(format!("t_end must be finite and nonnegative, got {t_end}")));
    }
    Ok(())
}

/// Closed macro law `m_eff ṡ = −γ_r r + N_real G_rᵀγ_q m₁(t)` with the first
/// moment transported exactly, `m₁(t) = m₁^in + M·(−G_r(r − r^in))`, where `M`
/// is the mass of `μ^in` (one for probability measures).
struct MomentRhs {
    n_r: usize,
    m_eff_inv: DMatrix<f64>,
    gamma_r: DMatrix<f64>,
    coupling: DMatrix<f64>,
    g_r: DMatrix<f64>,
    r_in: DVector<f64>,
    m1_in: DVector<f64>,
    mass: f64,
}

impl MomentRhs {
    fn first_moment(&self, r: &DVector<f64>) -> DVector<f64> {
        &self.m1_in - self.mass * (&self.g_r * (r - &self.r_in))
    }

    fn eval(&self, y: &[f64], dy: &mut [f64]) {
        let n_r = self.n_r;
        let r = DVector::from_column_slice(&y[..n_r]);
        let acc = &self.m_eff_inv * (-(&self.gamma_r * &r) + &self.coupling * self.first_moment(&r));
        dy[..n_r].copy_from_slice(&y[n_r..]);
        dy[n_r..].copy_from_slice(acc.as_slice());
    }
}

/// Integrates the closed first-moment system. This is the exact kinetic
/// solution of the linear model; `μ_t` is recovered by pushforward.
pub fn integrate_moment_ode(
    p: &ModelParams,
    r_in: &DVector<f64>,
    s_in: &DVector<f64>,
    mu_in: &Measure,
    t_end: f64,
    opts: &KineticOptions,
) -> Result<KineticTrajectory> {
    check_macro(p, r_in, s_in)?;
    check_times(t_end)?;
    if mu_in.dim() != p.n_q() {
        return Err(invalid(format!("initial measure lives in R^{}, particles in R^{}", mu_in.dim(), p.n_q())));
    }
    let rhs = MomentRhs {
        n_r: p.n_r(),
        m_eff_inv: p.effective_mass_inv().clone(),
        gamma_r: p.gamma_r().clone(),
        coupling: p.force_coupling(),
        g_r: p.g_r().clone(),
        r_in: r_in.clone(),
        m1_in: mu_in.first_moment()?,
        mass: mu_in.mass(),
    };
    let times = ode::uniform_times(t_end, opts.samples);
    let mut y0 = r_in.as_slice().to_vec();
    y0.extend_from_slice(s_in.as_slice());
    let out = ode::integrate(|_, y, dy| rhs.eval(y, dy), &y0, &times, &opts.solver)?;

    let n_r = p.n_r();
    let ident = DMatrix::identity(p.n_q(), p.n_q());
    let n = out.times.len();
    let mut traj = KineticTrajectory {
        times: out.times,
        macro_states: Vec::with_capacity(n),
        accelerations: Vec::with_capacity(n),
        first_moments: Vec::with_capacity(n),
        second_moments: Vec::with_capacity(n),
        masses: vec![rhs.mass; n],
        outflow: vec![0.0; n],
        min_density: vec![0.0; n],
        snapshots: None,
        r_in: r_in.clone(),
        s_in: s_in.clone(),
        mu_in: mu_in.clone(),
        stats: out.stats,
    };
    let mut dy = vec![0.0; 2 * n_r];
    for y in &out.states {
        rhs.eval(y, &mut dy);
        let r = DVector::from_column_slice(&y[..n_r]);
        traj.first_moments.push(rhs.first_moment(&r));
        traj.second_moments.push(pushforward(p, mu_in, &r, r_in)?.quadratic_moment(&ident)?);
        traj.accelerations.push(DVector::from_column_slice(&dy[n_r..]));
        traj.macro_states.push(MacroState { r, s: DVector::from_column_slice(&y[n_r..]) });
    }
    Ok(traj)
}

/// Semi-discrete upwind derivative for `∂_t u + v ∂_q u = 0` with zero ghost
/// values beyond both ends.
pub fn upwind_rhs(u: &GridDensity, v: f64) -> Vec<f64> {
    let mut du = vec![0.0; u.n_pts()];
    upwind_into(u.values(), v, u.dx(), &mut du);
    du
}

fn upwind_into(u: &[f64], v: f64, dx: f64, du: &mut [f64]) {
    let n = u.len();
    let c = -v / dx;
    if v >= 0.0 {
        du[0] = c * u[0];
        for i in 1..n {
            du[i] = c * (u[i] - u[i - 1]);
        }
    } else {
        for i in 0..n - 1 {
            du[i] = c * (u[i + 1] - u[i]);
        }
        du[n - 1] = -c * u[n - 1];
    }
}

/// Rate at which mass `Σ u_i Δx` leaves through the boundary on the upwind side.
fn outflow_rate(u: &[f64], v: f64) -> f64 {
    if v >= 0.0 {
        v * u[u.len() - 1]
    } else {
        -v * u[0]
    }
}

/// One explicit Euler step of the upwind scheme. The step must satisfy the
/// CFL condition `|v| dt ≤ Δx`, under which the scheme is monotone.
pub fn upwind_euler_step(u: &GridDensity, v: f64, dt: f64) -> Result<GridDensity> {
    let cfl = v.abs() * dt / u.dx();
    if !(dt >= 0.0) || cfl > 1.0 + 1e-12 {
        return Err(invalid(format!("explicit upwind step violates CFL: |v| dt / dx = {cfl}")));
    }
    let du = upwind_rhs(u, v);
    Ok(u.with_values(u.values().iter().zip(&du).map(|(a, b)| a + dt * b).collect()))
}

/// Macro ODE coupled to the upwind transport equation (method of lines).
///
/// The macro force uses the trapezoid first moment of the current density.
/// Mass leaving the grid is tracked as an extra state; a warning is logged
/// once the cumulative loss exceeds [`MASS_LOSS_WARN`].
pub fn integrate_pde_coupled(
    p: &ModelParams,
    r_in: &DVector<f64>,
    s_in: &DVector<f64>,
    u_in: &GridDensity,
    t_end: f64,
    opts: &KineticOptions,
) -> Result<KineticTrajectory> {
    check_macro(p, r_in, s_in)?;
    check_times(t_end)?;
    if p.n_q() != 1 {
        return Err(Error::Unsupported("transport solver requires n_q = 1".into()));
    }
    if u_in.n_pts() < 3 {
        return Err(invalid("transport solver needs at least 3 grid points"));
    }
    if u_in.min_value() < 0.0 {
        return Err(invalid(format!("initial density has negative value {}", u_in.min_value())));
    }
    let n_r = p.n_r();
    let n_pts = u_in.n_pts();
    let (lo, dx) = (u_in.lo(), u_in.dx());
    let m_eff_inv = p.effective_mass_inv().clone();
    let gamma_r = p.gamma_r().clone();
    let coupling = p.force_coupling();
    let g_row = p.g_r().row(0).transpose();

    // state layout: [r, s, u_0 .. u_{n-1}, outflow]
    let rhs = |y: &[f64], dy: &mut [f64]| {
        let r = DVector::from_column_slice(&y[..n_r]);
        let s = &y[n_r..2 * n_r];
        let u = &y[2 * n_r..2 * n_r + n_pts];
        let m1 = trapezoid_weighted(lo, dx, u, |q| q);
        let acc = &m_eff_inv * (-(&gamma_r * &r) + &coupling * DVector::from_element(1, m1));
        let v = -g_row.iter().zip(s).map(|(g, s)| g * s).sum::<f64>();
        dy[..n_r].copy_from_slice(s);
        dy[n_r..2 * n_r].copy_from_slice(acc.as_slice());
        let (du, rest) = dy[2 * n_r..].split_at_mut(n_pts);
        upwind_into(u, v, dx, du);
        rest[0] = outflow_rate(u, v);
    };

    let times = ode::uniform_times(t_end, opts.samples);
    let mut y0 = r_in.as_slice().to_vec();
    y0.extend_from_slice(s_in.as_slice());
    y0.extend_from_slice(u_in.values());
    y0.push(0.0);
    let out = ode::integrate(|_, y, dy| rhs(y, dy), &y0, &times, &opts.solver)?;

    let n = out.times.len();
    let mut traj = KineticTrajectory {
        times: out.times,
        macro_states: Vec::with_capacity(n),
        accelerations: Vec::with_capacity(n),
        first_moments: Vec::with_capacity(n),
        second_moments: Vec::with_capacity(n),
        masses: Vec::with_capacity(n),
        outflow: Vec::with_capacity(n),
        min_density: Vec::with_capacity(n),
        snapshots: opts.keep_snapshots.then(|| Vec::with_capacity(n)),
        r_in: r_in.clone(),
        s_in: s_in.clone(),
        mu_in: Measure::Grid(u_in.clone()),
        stats: out.stats,
    };
    let mut dy = vec![0.0; y0.len()];
    for y in &out.states {
        rhs(y, &mut dy);
        let u = u_in.with_values(y[2 * n_r..2 * n_r + n_pts].to_vec());
        traj.macro_states.push(MacroState {
            r: DVector::from_column_slice(&y[..n_r]),
            s: DVector::from_column_slice(&y[n_r..2 * n_r]),
        });
        traj.accelerations.push(DVector::from_column_slice(&dy[n_r..2 * n_r]));
        traj.first_moments.push(DVector::from_element(1, u.moment(1)));
        traj.second_moments.push(u.moment(2));
        traj.masses.push(u.mass());
        traj.outflow.push(y[2 * n_r + n_pts]);
        traj.min_density.push(u.min_value());
        if let Some(s) = traj.snapshots.as_mut() {
            s.push(u);
        }
    }
    let lost = *traj.outflow.last().unwrap();
    if lost > MASS_LOSS_WARN {
        warn!("transport solver: mass {lost:.3e} left the grid [{}, {}]", u_in.lo(), u_in.hi());
    }
    let min = traj.min_density.iter().copied().fold(0.0, f64::min);
    if min < -1e-12 {
        warn!("transport solver: density undershoot {min:.3e}");
    }
    Ok(traj)
}

/// `λ_mf = −γ_q q + M_q G_r ṡ`.
pub fn mean_field_multiplier(p: &ModelParams, q: &DVector<f64>, s_dot: &DVector<f64>) -> DVector<f64> {
    -(p.gamma_q() * q) + p.m_q() * p.g_r() * s_dot
}

/// `∫ λ_mf dμ`, which is affine in the mass and first moment of `μ`.
fn integrated_multiplier(p: &ModelParams, mass: f64, m1: &DVector<f64>, s_dot: &DVector<f64>) -> DVector<f64> {
    -(p.gamma_q() * m1) + mass * (p.m_q() * p.g_r() * s_dot)
}

/// Largest residual of the constrained kinetic balance law
/// `M_r ṡ + γ_r r + N_real ∫ G_rᵀ λ_mf dμ_t` over the samples.
pub fn commutation_check(p: &ModelParams, traj: &KineticTrajectory) -> f64 {
    traj.macro_states
        .iter()
        .zip(&traj.accelerations)
        .zip(traj.first_moments.iter().zip(&traj.masses))
        .map(|((m, a), (m1, mass))| {
            let lam = integrated_multiplier(p, *mass, m1, a);
            (p.m_r() * a + p.gamma_r() * &m.r + p.n_real() * p.g_r().transpose() * lam).amax()
        })
        .fold(0.0, f64::max)
}

/// Energies of the kinetic system; `U_q = ½ N_real ∫ qᵀγ_q q dμ_t`.
pub fn energy_kinetic(p: &ModelParams, traj: &KineticTrajectory) -> Result<EnergyReport> {
    let mut report = EnergyReport::with_capacity(traj.times.len());
    for (k, (t, m)) in traj.times.iter().zip(&traj.macro_states).enumerate() {
        let gs = p.g_r() * &m.s;
        let quad = traj.measure_at(p, k)?.quadratic_moment(p.gamma_q())?;
        report.push(
            *t,
            0.5 * m.s.dot(&(p.m_r() * &m.s)),
            0.5 * p.n_real() * gs.dot(&(p.m_q() * &gs)),
            0.5 * m.r.dot(&(p.gamma_r() * &m.r)),
            0.5 * p.n_real() * quad,
        );
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microsim::explicit_solution;
    use approx::assert_abs_diff_eq;

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn characteristic_flow_examples() {
        let p = ModelParams::table1();
        assert_eq!(characteristic_flow(&p, &v1(1.0), &v1(1.0), &v1(-2.0))[0], -2.0);
        assert_abs_diff_eq!(characteristic_flow(&p, &v1(1.5), &v1(1.0), &v1(-2.0))[0], -1.5, epsilon = 1e-15);
        let decoupled = ModelParams::scalar(1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1).unwrap();
        assert_eq!(characteristic_flow(&decoupled, &v1(7.0), &v1(1.0), &v1(-2.0))[0], -2.0);
    }

    #[test]
    fn pushforward_shifts_gaussian_mean() {
        let p = ModelParams::table1();
        let mu = Measure::gaussian(-2.0, 1.0).unwrap();
        let out = pushforward(&p, &mu, &v1(1.5), &v1(1.0)).unwrap();
        assert_eq!(out, Measure::Gaussian { mean: -1.5, var: 1.0 });
        assert_eq!(pushforward(&p, &mu, &v1(1.0), &v1(1.0)).unwrap(), mu);
    }

    #[test]
    fn moment_ode_matches_closed_form() {
        let p = ModelParams::table1();
        let mu = Measure::gaussian(-2.0, 1.0).unwrap();
        let opts = KineticOptions { solver: SolverOptions::with_tol(1e-10), ..KineticOptions::default() };
        let traj = integrate_moment_ode(&p, &v1(1.0), &v1(0.0), &mu, 60.0, &opts).unwrap();
        let sol = explicit_solution(&p, 1.0, 0.0, -2.0).unwrap();
        for (t, m) in traj.times.iter().zip(&traj.macro_states) {
            let (r, s) = sol.eval(*t);
            assert!((m.r[0] - r).abs() < 1e-8 && (m.s[0] - s).abs() < 1e-8, "t = {t}");
        }
        for (m, m1) in traj.macro_states.iter().zip(&traj.first_moments) {
            assert_abs_diff_eq!(m1[0] + p.g_r()[(0, 0)] * (m.r[0] - 1.0) + 2.0, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn moment_ode_rests_at_equilibrium() {
        let p = ModelParams::table1();
        let mu = Measure::gaussian(-1.5, 1.0).unwrap();
        let traj = integrate_moment_ode(&p, &v1(1.5), &v1(0.0), &mu, 20.0, &KineticOptions::default()).unwrap();
        assert!(traj.macro_states.iter().all(|m| (m.r[0] - 1.5).abs() < 1e-12));
        assert!(commutation_check(&p, &traj) < 1e-12);
    }

    #[test]
    fn upwind_stencil_examples() {
        let u = GridDensity::sample(-5.0, 7.0, 101, |_| 0.0).unwrap();
        assert!(upwind_rhs(&u, 0.7).iter().all(|&d| d == 0.0));

        let flat = GridDensity::sample(-5.0, 7.0, 101, |_| 2.0).unwrap();
        let d = upwind_rhs(&flat, 0.3);
        assert!(d[1..100].iter().all(|&x| x == 0.0));
        assert!(d[0] < 0.0);

        let mut vals = vec![0.0; 101];
        vals[40] = 1.0;
        let ind = GridDensity::new(-5.0, 7.0, vals).unwrap();
        let d = upwind_rhs(&ind, 1.0);
        assert_abs_diff_eq!(d[40], -1.0 / 0.12, epsilon = 1e-9);
        assert_abs_diff_eq!(d[41], 1.0 / 0.12, epsilon = 1e-9);
        assert_eq!(d.iter().filter(|&&x| x != 0.0).count(), 2);
        let d = upwind_rhs(&ind, -1.0);
        assert_abs_diff_eq!(d[40], -1.0 / 0.12, epsilon = 1e-9);
        assert_abs_diff_eq!(d[39], 1.0 / 0.12, epsilon = 1e-9);
    }

    #[test]
    fn euler_step_rejects_cfl_violation() {
        let u = GridDensity::sample(0.0, 1.0, 11, |_| 1.0).unwrap();
        assert!(upwind_euler_step(&u, 1.0, 0.2).is_err());
        assert!(upwind_euler_step(&u, 1.0, 0.1).is_ok());
    }

    #[test]
    fn density_moves_with_positive_velocity() {
        let u = GridDensity::sample(-5.0, 7.0, 401, |q| (-(q * q) / 0.5).exp()).unwrap();
        let mut cur = u.clone();
        for _ in 0..100 {
            cur = upwind_euler_step(&cur, 1.0, 0.01).unwrap();
        }
        let mean = |g: &GridDensity| g.moment(1) / g.mass();
        assert_abs_diff_eq!(mean(&cur) - mean(&u), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn decoupled_transport_freezes_density() {
        let p = ModelParams::scalar(1.0, 0.04, 1.0, 0.004, 0.0, 250.0, 250).unwrap();
        let mu = Measure::gaussian(-2.0, 1.0).unwrap();
        let u = GridDensity::from_measure(&mu, -5.0, 7.0, 101).unwrap();
        let opts = KineticOptions { samples: 31, ..KineticOptions::default() };
        let traj = integrate_pde_coupled(&p, &v1(1.0), &v1(0.0), &u, 3.0, &opts).unwrap();
        let last = traj.snapshots.as_ref().unwrap().last().unwrap();
        assert_eq!(last.values(), u.values());
        for (t, m) in traj.times.iter().zip(&traj.macro_states) {
            assert!((m.r[0] - t.cos()).abs() < 1e-6);
        }
    }

    #[test]
    fn multiplier_examples() {
        let p = ModelParams::table1();
        assert_eq!(mean_field_multiplier(&p, &v1(0.0), &v1(0.0))[0], 0.0);
        assert_abs_diff_eq!(mean_field_multiplier(&p, &v1(-2.0), &v1(1.0 / 30.0))[0], 0.008 - 0.04 / 30.0, epsilon = 1e-15);
    }

    #[test]
    fn kinetic_energy_at_start() {
        let p = ModelParams::table1();
        let mu = Measure::gaussian(-2.0, 1.0).unwrap();
        let traj = integrate_moment_ode(&p, &v1(1.0), &v1(0.0), &mu, 0.0, &KineticOptions::default()).unwrap();
        let e = energy_kinetic(&p, &traj).unwrap();
        assert_abs_diff_eq!(e.u_q[0], 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(e.e_total[0], 3.0, epsilon = 1e-12);
    }
}
