//! Numerical experiments built on the solvers: Monte-Carlo variance scaling,
//! convergence of mean trajectories to the kinetic one, the consistency of the
//! kinetic and discrete descriptions for empirical data, and energy budgets.
//!
//! Work items are keyed by `(N, sample)` and each draws from its own random
//! stream, so results do not depend on the number of worker threads.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::meanfield::{energy_kinetic, integrate_moment_ode, integrate_pde_coupled, KineticOptions, KineticTrajectory};
use crate::measure::{EmpiricalMeasure, GridDensity, Measure};
use crate::metrics::{dobrushin_constants, w1};
use crate::microsim::{energy_micro, integrate_micro, EnergyReport, MicroOptions, Residuals, DEFAULT_SAMPLES};
use crate::model::{MacroState, ModelParams, ParticleEnsemble};
use crate::ode::SolverOptions;
use crate::rng;

/// Stream tags separating the experiments' random draws.
const TAG_MC: u64 = 0x6d63;
const TAG_SINGLE: u64 = 0x7331;

/// Spatial grid of the transport solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n_pts: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { lo: -5.0, hi: 7.0, n_pts: 101 }
    }
}

impl GridSpec {
    pub fn density(&self, mu: &Measure) -> Result<GridDensity> {
        GridDensity::from_measure(mu, self.lo, self.hi, self.n_pts)
    }
}

/// Everything needed to run one of the solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: ModelParams,
    pub r_in: DVector<f64>,
    pub s_in: DVector<f64>,
    pub mu_in: Measure,
    pub t_end: f64,
    pub samples: usize,
    pub solver: SolverOptions,
    pub grid: GridSpec,
    pub seed: u64,
}

impl Scenario {
    /// The reference parameter set with `r^in = 1`, `s^in = 0`,
    /// `μ^in = N(−2, 1)` on `[0, 60]`.
    pub fn table1() -> Self {
        Self {
            params: ModelParams::table1(),
            r_in: DVector::from_element(1, 1.0),
            s_in: DVector::from_element(1, 0.0),
            mu_in: Measure::Gaussian { mean: -2.0, var: 1.0 },
            t_end: 60.0,
            samples: DEFAULT_SAMPLES,
            solver: SolverOptions::default(),
            grid: GridSpec::default(),
            seed: 0,
        }
    }

    pub fn micro_options(&self) -> MicroOptions {
        MicroOptions { solver: self.solver, samples: self.samples, ..MicroOptions::default() }
    }

    pub fn kinetic_options(&self) -> KineticOptions {
        KineticOptions { solver: self.solver, samples: self.samples, keep_snapshots: true }
    }

    pub fn initial_macro(&self) -> MacroState {
        MacroState { r: self.r_in.clone(), s: self.s_in.clone() }
    }

    /// The single ensemble of `N` particles used by the one-shot experiments.
    pub fn draw_ensemble(&self) -> Result<ParticleEnsemble> {
        let n = self.params.n();
        rng::sample_ensemble(&self.mu_in, n, &mut rng::stream(self.seed, &[TAG_SINGLE, n as u64]))
    }

    /// The exact kinetic solution.
    pub fn kinetic(&self) -> Result<KineticTrajectory> {
        integrate_moment_ode(&self.params, &self.r_in, &self.s_in, &self.mu_in, self.t_end, &self.kinetic_options())
    }

    /// The upwind transport solution started from the grid sampling of `μ^in`.
    pub fn transport(&self) -> Result<KineticTrajectory> {
        let u_in = self.grid.density(&self.mu_in)?;
        integrate_pde_coupled(&self.params, &self.r_in, &self.s_in, &u_in, self.t_end, &self.kinetic_options())
    }
}

/// Results for one particle count.
#[derive(Debug, Clone, PartialEq)]
pub struct McPerN {
    pub n: usize,
    /// `r(t)` (first component) of each sample.
    pub trajectories: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Unbiased pointwise variance over the samples.
    pub variance: Vec<f64>,
    pub max_variance: f64,
    /// `sup_t |mean(t) − r^kin(t)|`
    pub sup_error: f64,
    /// Largest constraint residuals over all samples.
    pub residuals: Residuals,
    /// Sample mean of `W1(μ^emp, μ^in)` at time zero.
    pub mean_initial_w1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McStudyResult {
    pub times: Vec<f64>,
    pub kinetic: Vec<f64>,
    pub per_n: Vec<McPerN>,
    pub n_samples: usize,
    pub base_seed: u64,
    pub t_end: f64,
}

impl McStudyResult {
    pub fn n_values(&self) -> Vec<usize> {
        self.per_n.iter().map(|r| r.n).collect()
    }

    /// Least-squares slope of `log(max_variance)` against `log N`, with the
    /// contribution of each point (summing to the slope). `None` for fewer
    /// than two particle counts or a vanishing variance.
    pub fn variance_slope(&self) -> Option<(f64, Vec<f64>)> {
        let pts: Vec<(f64, f64)> = self.per_n.iter().map(|r| ((r.n as f64).ln(), r.max_variance.ln())).collect();
        if pts.len() < 2 || pts.iter().any(|(_, y)| !y.is_finite()) {
            return None;
        }
        let k = pts.len() as f64;
        let xm = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let ym = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxx: f64 = pts.iter().map(|p| (p.0 - xm).powi(2)).sum();
        if sxx == 0.0 {
            return None;
        }
        let contrib: Vec<f64> = pts.iter().map(|p| (p.0 - xm) * (p.1 - ym) / sxx).collect();
        Some((contrib.iter().sum(), contrib))
    }
}

/// Draws `n_samples` initial ensembles per particle count, integrates the
/// discrete system for each and compares the statistics of `r(t)` with the
/// kinetic trajectory.
pub fn run_mc_study(sc: &Scenario, n_values: &[usize], n_samples: usize) -> Result<McStudyResult> {
    if n_samples < 2 {
        return Err(invalid("a Monte-Carlo study needs at least 2 samples"));
    }
    if n_values.is_empty() || n_values.contains(&0) {
        return Err(invalid("particle counts must be a non-empty list of positive integers"));
    }
    let kinetic = sc.kinetic()?;
    let r_kin = kinetic.r_series(0);
    let opts = sc.micro_options();
    let init = sc.initial_macro();

    let items: Vec<(usize, usize)> = n_values.iter().flat_map(|&n| (0..n_samples).map(move |k| (n, k))).collect();
    let runs: Vec<(Vec<f64>, Residuals, f64)> = items
        .par_iter()
        .map(|&(n, k)| {
            let wrap = |e: Error| Error::Sample { n, sample: k, source: Box::new(e) };
            let p = sc.params.scale_particles(n).map_err(wrap)?;
            let mut stream = rng::stream(sc.seed, &[TAG_MC, n as u64, k as u64]);
            let ens = rng::sample_ensemble(&sc.mu_in, n, &mut stream).map_err(wrap)?;
            let w = if sc.mu_in.dim() == 1 { w1(&Measure::Empirical(ens.empirical()), &sc.mu_in).map_err(wrap)? } else { f64::NAN };
            let traj = integrate_micro(&p, &init, &ens, sc.t_end, &opts).map_err(wrap)?;
            Ok((traj.r_series(0), traj.max_residuals(), w))
        })
        .collect::<Result<_>>()?;

    let n_t = r_kin.len();
    let per_n = n_values
        .iter()
        .zip(runs.chunks(n_samples))
        .map(|(&n, chunk)| {
            let m = chunk.len() as f64;
            let mean: Vec<f64> = (0..n_t).map(|i| chunk.iter().map(|c| c.0[i]).sum::<f64>() / m).collect();
            let variance: Vec<f64> = (0..n_t)
                .map(|i| chunk.iter().map(|c| (c.0[i] - mean[i]).powi(2)).sum::<f64>() / (m - 1.0))
                .collect();
            let residuals = chunk.iter().fold(Residuals::default(), |acc, c| Residuals {
                index3: acc.index3.max(c.1.index3),
                index2: acc.index2.max(c.1.index2),
            });
            McPerN {
                n,
                max_variance: variance.iter().copied().fold(0.0, f64::max),
                sup_error: mean.iter().zip(&r_kin).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
                trajectories: chunk.iter().map(|c| c.0.clone()).collect(),
                mean,
                variance,
                residuals,
                mean_initial_w1: chunk.iter().map(|c| c.2).sum::<f64>() / m,
            }
        })
        .collect();
    Ok(McStudyResult { times: kinetic.times, kinetic: r_kin, per_n, n_samples, base_seed: sc.seed, t_end: sc.t_end })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfErrorCurve {
    pub n_values: Vec<usize>,
    pub errors: Vec<f64>,
    /// Spearman rank correlation between `N` and the error; `None` when
    /// undefined (a single particle count or constant data).
    pub spearman: Option<f64>,
    /// `10·C·e^{L t_end}·E[W1(μ^emp, μ^in)]` per `N`, a loose reference
    /// scale from the stability estimate.
    pub stability_scale: Vec<f64>,
}

impl MfErrorCurve {
    pub fn trend_defined(&self) -> bool {
        self.spearman.is_some()
    }

    pub fn within_stability_scale(&self) -> bool {
        self.errors.iter().zip(&self.stability_scale).all(|(e, b)| e <= b)
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation, `None` if either input has no spread.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

/// Distance between the Monte-Carlo mean trajectories and the kinetic one.
pub fn mf_error_curve(p: &ModelParams, study: &McStudyResult) -> MfErrorCurve {
    let n_values = study.n_values();
    let errors: Vec<f64> = study.per_n.iter().map(|r| r.sup_error).collect();
    let ns: Vec<f64> = n_values.iter().map(|&n| n as f64).collect();
    let k = dobrushin_constants(p);
    let growth = 10.0 * k.c * (k.l * study.t_end).exp();
    MfErrorCurve {
        spearman: spearman(&ns, &errors),
        stability_scale: study.per_n.iter().map(|r| growth * r.mean_initial_w1).collect(),
        n_values,
        errors,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub n: usize,
    /// `sup_t ‖r^micro(t) − r^kin(t)‖ + ‖s^micro(t) − s^kin(t)‖` (max norms).
    pub deviation: f64,
    /// Set when `N_real ≠ N`, in which case the two descriptions differ.
    pub mismatched: bool,
}

/// Runs the discrete system for one drawn ensemble and the moment ODE started
/// from its empirical measure with `N_real := N`.
pub fn consistency_experiment(sc: &Scenario) -> Result<ConsistencyReport> {
    let p = &sc.params;
    let n = p.n();
    let ens = sc.draw_ensemble()?;
    let micro = integrate_micro(p, &sc.initial_macro(), &ens, sc.t_end, &sc.micro_options())?;
    let kin_params = p.with_n_real(n as f64)?;
    let mu_emp = Measure::Empirical(EmpiricalMeasure::uniform(p.n_q(), ens.as_slice().to_vec())?);
    let opts = KineticOptions { keep_snapshots: false, ..sc.kinetic_options() };
    let kinetic = integrate_moment_ode(&kin_params, &sc.r_in, &sc.s_in, &mu_emp, sc.t_end, &opts)?;
    let deviation = micro
        .macro_states
        .iter()
        .zip(&kinetic.macro_states)
        .map(|(a, b)| (&a.r - &b.r).amax().max((&a.s - &b.s).amax()))
        .fold(0.0, f64::max);
    Ok(ConsistencyReport { n, deviation, mismatched: p.n_real() != n as f64 })
}

#[derive(Debug, Clone)]
pub struct EnergyExperiment {
    pub micro: EnergyReport,
    pub moment: EnergyReport,
    pub pde: EnergyReport,
    pub pde_trajectory: KineticTrajectory,
    pub density_initial: GridDensity,
    pub density_final: GridDensity,
}

/// Energies of the discrete system (one drawn ensemble), the exact kinetic
/// solution and the upwind transport solution.
pub fn energy_experiment(sc: &Scenario) -> Result<EnergyExperiment> {
    let p = &sc.params;
    let ens = sc.draw_ensemble()?;
    let micro = integrate_micro(p, &sc.initial_macro(), &ens, sc.t_end, &sc.micro_options())?;
    let moment = sc.kinetic()?;
    let pde = sc.transport()?;
    let snaps = pde.snapshots.as_ref().expect("transport solver keeps snapshots");
    Ok(EnergyExperiment {
        micro: energy_micro(p, &micro),
        moment: energy_kinetic(p, &moment)?,
        pde: energy_kinetic(p, &pde)?,
        density_initial: snaps[0].clone(),
        density_final: snaps.last().unwrap().clone(),
        pde_trajectory: pde,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 10.0, 100.0]), Some(1.0));
        assert_eq!(spearman(&[1.0], &[1.0]), None);
        assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), None);
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let per_n = [4usize, 16, 64]
            .iter()
            .map(|&n| McPerN {
                n,
                trajectories: vec![],
                mean: vec![],
                variance: vec![],
                max_variance: 3.0 / n as f64,
                sup_error: 0.0,
                residuals: Residuals::default(),
                mean_initial_w1: 0.0,
            })
            .collect();
        let study = McStudyResult { times: vec![], kinetic: vec![], per_n, n_samples: 2, base_seed: 0, t_end: 1.0 };
        let (slope, contrib) = study.variance_slope().unwrap();
        assert_abs_diff_eq!(slope, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(contrib.iter().sum::<f64>(), slope, epsilon = 1e-15);
        assert_eq!(contrib[1], 0.0);
    }

    #[test]
    fn deterministic_initial_data_has_no_variance() {
        let mut sc = Scenario::table1();
        sc.mu_in = Measure::normal(-2.0, 0.0).unwrap();
        sc.t_end = 10.0;
        sc.samples = 51;
        let study = run_mc_study(&sc, &[1, 3], 2).unwrap();
        for r in &study.per_n {
            assert_eq!(r.max_variance, 0.0);
            assert!(r.sup_error < 1e-7);
        }
        let curve = mf_error_curve(&sc.params, &study);
        assert_eq!(curve.errors.len(), 2);
    }

    #[test]
    fn study_rejects_bad_input() {
        let sc = Scenario::table1();
        assert!(run_mc_study(&sc, &[4], 1).is_err());
        assert!(run_mc_study(&sc, &[0], 2).is_err());
        assert!(run_mc_study(&sc, &[], 2).is_err());
    }

    #[test]
    fn single_particle_consistency() {
        let mut sc = Scenario::table1();
        sc.params = sc.params.scale_particles(1).unwrap().with_n_real(1.0).unwrap();
        sc.t_end = 20.0;
        let rep = consistency_experiment(&sc).unwrap();
        assert!(!rep.mismatched);
        assert!(rep.deviation < 1e-7, "deviation {}", rep.deviation);
    }
}
