//! Model parameters, state types and the closed-form effective quantities.
//!
//! `M_q` and `γ_q` are stored per *realistic* particle. A simulation with `N`
//! particles standing in for `N_real` realistic ones uses the scaled
//! per-particle mass `(N_real/N)·M_q` and stiffness `(N_real/N)·γ_q`, so the
//! aggregate quantities `m_eff` and `γ_eff` do not depend on `N`.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::measure::Measure;

/// Physical constants of the coupled oscillator/particle system.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    m_r: DMatrix<f64>,
    m_q: DMatrix<f64>,
    gamma_r: DMatrix<f64>,
    gamma_q: DMatrix<f64>,
    g_r: DMatrix<f64>,
    n_real: f64,
    n: usize,
    m_eff_inv: DMatrix<f64>,
}

fn check_square(name: &str, m: &DMatrix<f64>, dim: usize) -> Result<()> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(invalid(format!("{name} must be {dim}x{dim}, got {}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(invalid(format!("{name} has non-finite entries")));
    }
    Ok(())
}

fn check_spd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(invalid(format!("{name} must be symmetric")));
    }
    if m.clone().cholesky().is_none() {
        return Err(invalid(format!("{name} must be positive definite")));
    }
    Ok(())
}

impl ModelParams {
    /// Validates shapes and definiteness. `g_r` is `n_q × n_r`.
    pub fn new(
        m_r: DMatrix<f64>,
        m_q: DMatrix<f64>,
        gamma_r: DMatrix<f64>,
        gamma_q: DMatrix<f64>,
        g_r: DMatrix<f64>,
        n_real: f64,
        n: usize,
    ) -> Result<Self> {
        let n_r = m_r.nrows();
        let n_q = m_q.nrows();
        if n_r == 0 || n_q == 0 {
            return Err(invalid("dimensions n_r and n_q must be positive"));
        }
        check_square("M_r", &m_r, n_r)?;
        check_square("M_q", &m_q, n_q)?;
        check_square("gamma_r", &gamma_r, n_r)?;
        check_square("gamma_q", &gamma_q, n_q)?;
        if g_r.nrows() != n_q || g_r.ncols() != n_r {
            return Err(invalid(format!("G_r must be {n_q}x{n_r}, got {}x{}", g_r.nrows(), g_r.ncols())));
        }
        if g_r.iter().any(|x| !x.is_finite()) {
            return Err(invalid("G_r has non-finite entries"));
        }
        check_spd("M_r", &m_r)?;
        check_spd("M_q", &m_q)?;
        if !(n_real.is_finite() && n_real >= 0.0) {
            return Err(invalid(format!("N_real must be a nonnegative real, got {n_real}")));
        }
        if n == 0 {
            return Err(invalid("N must be at least 1"));
        }
        let m_eff = &m_r + n_real * g_r.transpose() * &m_q * &g_r;
        let m_eff_inv = m_eff
            .try_inverse()
            .ok_or_else(|| invalid("effective mass is singular"))?;
        Ok(Self { m_r, m_q, gamma_r, gamma_q, g_r, n_real, n, m_eff_inv })
    }

    /// One-dimensional macro system and particles.
    pub fn scalar(m_r: f64, m_q: f64, gamma_r: f64, gamma_q: f64, g_r: f64, n_real: f64, n: usize) -> Result<Self> {
        let s = |x: f64| DMatrix::from_element(1, 1, x);
        Self::new(s(m_r), s(m_q), s(gamma_r), s(gamma_q), s(g_r), n_real, n)
    }

    /// Reference parameter set: `M_r = 20`, `γ_r = 1`, `G_r = −1`,
    /// `N = N_real = 250`, `M_q = 10/N_real`, `γ_q = 1/N_real`.
    pub fn table1() -> Self {
        Self::scalar(20.0, 10.0 / 250.0, 1.0, 1.0 / 250.0, -1.0, 250.0, 250)
            .expect("reference parameters are valid")
    }

    pub fn n_r(&self) -> usize {
        self.m_r.nrows()
    }

    pub fn n_q(&self) -> usize {
        self.m_q.nrows()
    }

    pub fn m_r(&self) -> &DMatrix<f64> {
        &self.m_r
    }

    /// Mass of one realistic particle.
    pub fn m_q(&self) -> &DMatrix<f64> {
        &self.m_q
    }

    pub fn gamma_r(&self) -> &DMatrix<f64> {
        &self.gamma_r
    }

    /// Stiffness of one realistic particle.
    pub fn gamma_q(&self) -> &DMatrix<f64> {
        &self.gamma_q
    }

    pub fn g_r(&self) -> &DMatrix<f64> {
        &self.g_r
    }

    pub fn n_real(&self) -> f64 {
        self.n_real
    }

    /// Number of simulated particles.
    pub fn n(&self) -> usize {
        self.n
    }

    /// `N_real / N`, the weight of one simulated particle.
    pub fn particle_scale(&self) -> f64 {
        self.n_real / self.n as f64
    }

    /// Mass of one simulated particle, `(N_real/N)·M_q`.
    pub fn particle_mass(&self) -> DMatrix<f64> {
        self.particle_scale() * &self.m_q
    }

    /// Stiffness of one simulated particle, `(N_real/N)·γ_q`.
    pub fn particle_stiffness(&self) -> DMatrix<f64> {
        self.particle_scale() * &self.gamma_q
    }

    /// Same system simulated with `n` particles; `N_real` is unchanged.
    pub fn scale_particles(&self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("N must be at least 1"));
        }
        Ok(Self { n, ..self.clone() })
    }

    /// Same per-particle constants with a different realistic particle count.
    pub fn with_n_real(&self, n_real: f64) -> Result<Self> {
        Self::new(
            self.m_r.clone(),
            self.m_q.clone(),
            self.gamma_r.clone(),
            self.gamma_q.clone(),
            self.g_r.clone(),
            n_real,
            self.n,
        )
    }

    /// `M_r + N_real·G_rᵀ M_q G_r`.
    pub fn effective_mass(&self) -> DMatrix<f64> {
        &self.m_r + self.n_real * self.g_r.transpose() * &self.m_q * &self.g_r
    }

    pub fn effective_mass_inv(&self) -> &DMatrix<f64> {
        &self.m_eff_inv
    }

    /// `γ_r + N_real·G_rᵀ γ_q G_r`.
    pub fn effective_stiffness(&self) -> DMatrix<f64> {
        &self.gamma_r + self.n_real * self.g_r.transpose() * &self.gamma_q * &self.g_r
    }

    /// `N_real·G_rᵀ γ_q`, the map from a first moment to the mean-field force.
    pub fn force_coupling(&self) -> DMatrix<f64> {
        self.n_real * self.g_r.transpose() * &self.gamma_q
    }

    /// Mean-field force `N_real·G_rᵀ γ_q ∫ q dμ`.
    pub fn mean_field_force(&self, mu: &Measure) -> Result<DVector<f64>> {
        self.check_measure_dim(mu)?;
        Ok(self.force_coupling() * mu.first_moment()?)
    }

    /// Rest point `γ_eff⁻¹ N_real G_rᵀ γ_q (G_r r^in + ∫ q dμ^in)` of the
    /// effective balance law after eliminating the particles.
    pub fn equilibrium(&self, r_in: &DVector<f64>, mu_in: &Measure) -> Result<DVector<f64>> {
        self.check_measure_dim(mu_in)?;
        self.equilibrium_from_mean(r_in, &mu_in.first_moment()?)
    }

    pub fn equilibrium_from_mean(&self, r_in: &DVector<f64>, q_mean: &DVector<f64>) -> Result<DVector<f64>> {
        if r_in.len() != self.n_r() || q_mean.len() != self.n_q() {
            return Err(invalid("equilibrium: dimension mismatch"));
        }
        let rhs = self.force_coupling() * (&self.g_r * r_in + q_mean);
        self.effective_stiffness()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Unsupported("effective stiffness is singular; no unique rest point".into()))
    }

    fn check_measure_dim(&self, mu: &Measure) -> Result<()> {
        if mu.dim() != self.n_q() {
            return Err(invalid(format!("measure lives in R^{}, particles in R^{}", mu.dim(), self.n_q())));
        }
        Ok(())
    }
}

/// Macroscopic position `r` and velocity `s = ṙ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroState {
    pub r: DVector<f64>,
    pub s: DVector<f64>,
}

impl MacroState {
    pub fn new(r: DVector<f64>, s: DVector<f64>) -> Result<Self> {
        if r.len() != s.len() {
            return Err(invalid("r and s must have equal length"));
        }
        if r.iter().chain(s.iter()).any(|x| !x.is_finite()) {
            return Err(invalid("macro state must be finite"));
        }
        Ok(Self { r, s })
    }

    pub fn scalar(r: f64, s: f64) -> Self {
        Self { r: DVector::from_element(1, r), s: DVector::from_element(1, s) }
    }
}

/// Extensions `Q_1 … Q_N`, stored row-wise (`N × n_q` values).
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    n_q: usize,
    q: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn new(n_q: usize, q: Vec<f64>) -> Result<Self> {
        if n_q == 0 || q.is_empty() || q.len() % n_q != 0 {
            return Err(invalid("ensemble size must be a positive multiple of n_q"));
        }
        if q.iter().any(|x| !x.is_finite()) {
            return Err(invalid("particle extensions must be finite"));
        }
        Ok(Self { n_q, q })
    }

    pub fn from_scalars(q: Vec<f64>) -> Result<Self> {
        Self::new(1, q)
    }

    pub fn n_q(&self) -> usize {
        self.n_q
    }

    pub fn len(&self) -> usize {
        self.q.len() / self.n_q
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn particle(&self, j: usize) -> &[f64] {
        &self.q[j * self.n_q..(j + 1) * self.n_q]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.q
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.q
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.n_q);
        for chunk in self.q.chunks(self.n_q) {
            for (k, x) in chunk.iter().enumerate() {
                m[k] += x;
            }
        }
        m / self.len() as f64
    }

    /// Empirical measure with uniform weights on the particle positions.
    pub fn empirical(&self) -> crate::measure::EmpiricalMeasure {
        crate::measure::EmpiricalMeasure::uniform(self.n_q, self.q.clone())
            .expect("ensemble is non-empty and finite")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn table1_effective_quantities() {
        let p = ModelParams::table1();
        assert_relative_eq!(p.effective_mass()[(0, 0)], 30.0, epsilon = 1e-12);
        assert_relative_eq!(p.effective_stiffness()[(0, 0)], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn scaling_per_particle_constants() {
        let p = ModelParams::table1();
        let same = p.scale_particles(250).unwrap();
        assert_eq!(same, p);
        assert_relative_eq!(same.particle_mass()[(0, 0)], 0.04, epsilon = 1e-15);
        assert_relative_eq!(same.particle_stiffness()[(0, 0)], 0.004, epsilon = 1e-15);

        let p500 = p.scale_particles(500).unwrap();
        assert_relative_eq!(p500.particle_mass()[(0, 0)], 0.02, epsilon = 1e-15);
        assert_relative_eq!(p500.particle_stiffness()[(0, 0)], 0.002, epsilon = 1e-15);
        assert_relative_eq!(p500.effective_mass()[(0, 0)], 30.0, epsilon = 1e-12);
        assert_eq!(p500.n_real(), 250.0);
        assert!(p.scale_particles(0).is_err());
    }

    #[test]
    fn decoupled_limits() {
        let no_particles = ModelParams::scalar(20.0, 0.04, 1.0, 0.004, -1.0, 0.0, 1).unwrap();
        assert_eq!(no_particles.effective_mass()[(0, 0)], 20.0);
        assert_eq!(no_particles.effective_stiffness()[(0, 0)], 1.0);
        let uncoupled = ModelParams::scalar(20.0, 0.04, 1.0, 0.004, 0.0, 250.0, 250).unwrap();
        assert_eq!(uncoupled.effective_mass()[(0, 0)], 20.0);
        assert_eq!(uncoupled.effective_stiffness()[(0, 0)], 1.0);
    }

    #[test]
    fn equilibrium_reference_values() {
        let p = ModelParams::table1();
        let r_in = DVector::from_element(1, 1.0);
        let r0 = p.equilibrium(&r_in, &Measure::gaussian(-2.0, 1.0).unwrap()).unwrap();
        assert!((r0[0] - 1.5).abs() < 1e-12);

        let slack = ModelParams::scalar(20.0, 0.04, 1.0, 0.0, -1.0, 250.0, 250).unwrap();
        assert_eq!(slack.equilibrium(&r_in, &Measure::gaussian(-2.0, 1.0).unwrap()).unwrap()[0], 0.0);

        let sym = p
            .equilibrium(&DVector::from_element(1, 0.0), &Measure::gaussian(0.0, 1.0).unwrap())
            .unwrap();
        assert_eq!(sym[0], 0.0);
    }

    #[test]
    fn mean_field_force_examples() {
        let p = ModelParams::table1();
        let g = Measure::gaussian(-2.0, 1.0).unwrap();
        assert_relative_eq!(p.mean_field_force(&g).unwrap()[0], 2.0, epsilon = 1e-12);
        let delta = Measure::dirac(&[0.0]).unwrap();
        assert_eq!(p.mean_field_force(&delta).unwrap()[0], 0.0);
        let two = Measure::Empirical(crate::EmpiricalMeasure::from_scalars(vec![1.0, 3.0]).unwrap());
        assert_relative_eq!(p.mean_field_force(&two).unwrap()[0], -2.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(ModelParams::scalar(-1.0, 0.04, 1.0, 0.004, -1.0, 250.0, 250).is_err());
        assert!(ModelParams::scalar(20.0, 0.0, 1.0, 0.004, -1.0, 250.0, 250).is_err());
        assert!(ModelParams::scalar(20.0, 0.04, 1.0, 0.004, -1.0, -3.0, 250).is_err());
        assert!(ModelParams::scalar(20.0, 0.04, 1.0, 0.004, -1.0, 250.0, 0).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let one = DMatrix::identity(1, 1);
        assert!(ModelParams::new(asym, one.clone(), DMatrix::identity(2, 2), one.clone(), DMatrix::zeros(1, 2), 1.0, 1).is_err());
        // G_r with the wrong shape
        assert!(ModelParams::new(one.clone(), one.clone(), one.clone(), one.clone(), DMatrix::zeros(2, 1), 1.0, 1).is_err());
    }
}
