//! Probability measures on the particle configuration space.
//!
//! Three representations are supported: weighted atoms ([`EmpiricalMeasure`]),
//! nodal samples of a density on a uniform grid ([`GridDensity`]) and the
//! 1-D normal distribution. Grid and Gaussian measures are one-dimensional.

use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erfc;

use crate::error::{invalid, Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-12;

pub(crate) fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub(crate) fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Weighted sum of Dirac atoms in `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    /// Uniform weights `1/n` on the atoms stored row-wise in `atoms`.
    pub fn uniform(dim: usize, atoms: Vec<f64>) -> Result<Self> {
        if dim == 0 || atoms.is_empty() || atoms.len() % dim != 0 {
            return Err(invalid(format!(
                "empirical measure needs a non-empty multiple of dim = {dim} coordinates, got {}",
                atoms.len()
            )));
        }
        let n = atoms.len() / dim;
        Self::weighted(dim, atoms, vec![1.0 / n as f64; n])
    }

    pub fn weighted(dim: usize, atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || atoms.len() != dim * weights.len() || weights.is_empty() {
            return Err(invalid("atom/weight count mismatch"));
        }
        if atoms.iter().any(|x| !x.is_finite()) {
            return Err(invalid("empirical measure atoms must be finite"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("empirical weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(invalid(format!("empirical weights sum to {total}, expected 1")));
        }
        Ok(Self { dim, atoms, weights })
    }

    /// One-dimensional atoms with uniform weights.
    pub fn from_scalars(values: Vec<f64>) -> Result<Self> {
        Self::uniform(1, values)
    }

    pub fn dirac(point: &[f64]) -> Result<Self> {
        Self::uniform(point.len(), point.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * self.dim..(i + 1) * self.dim]
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn has_uniform_weights(&self) -> bool {
        let w0 = self.weights[0];
        self.weights.iter().all(|&w| w == w0)
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim);
        for (i, &w) in self.weights.iter().enumerate() {
            for (k, x) in self.atom(i).iter().enumerate() {
                m[k] += w * x;
            }
        }
        m
    }

    pub fn shifted(&self, w: &[f64]) -> Self {
        let atoms = self
            .atoms
            .chunks(self.dim)
            .flat_map(|a| a.iter().zip(w).map(|(x, d)| x + d))
            .collect();
        Self { dim: self.dim, atoms, weights: self.weights.clone() }
    }

    /// Atoms and weights of a 1-D measure sorted by position.
    pub(crate) fn sorted_1d(&self) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(self.dim, 1);
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.atoms[a].total_cmp(&self.atoms[b]));
        let xs = idx.iter().map(|&i| self.atoms[i]).collect();
        let ws = idx.iter().map(|&i| self.weights[i]).collect();
        (xs, ws)
    }
}

/// Density samples `u(y_i)` on the equidistant nodes `y_i = lo + i·dx`.
///
/// Between nodes the density is the linear interpolant, and it is zero outside
/// `[lo, hi]`. Integrals of the interpolant coincide with the trapezoid rule on
/// the nodes, so masses, moments and the CDF are mutually consistent.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    lo: f64,
    hi: f64,
    values: Vec<f64>,
}

impl GridDensity {
    pub fn new(lo: f64, hi: f64, values: Vec<f64>) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(invalid(format!("grid bounds must satisfy lo < hi, got [{lo}, {hi}]")));
        }
        if values.len() < 2 {
            return Err(invalid("grid density needs at least 2 points"));
        }
        if values.iter().any(|u| !u.is_finite()) {
            return Err(invalid("grid density values must be finite"));
        }
        Ok(Self { lo, hi, values })
    }

    /// Pointwise samples of `f` at the grid nodes (no renormalisation).
    pub fn sample(lo: f64, hi: f64, n_pts: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        if n_pts < 2 {
            return Err(invalid("grid density needs at least 2 points"));
        }
        let dx = (hi - lo) / (n_pts - 1) as f64;
        Self::new(lo, hi, (0..n_pts).map(|i| f(lo + i as f64 * dx)).collect())
    }

    /// Samples the density of `mu` at the nodes. Only Gaussian measures and
    /// grid densities (resampled by interpolation) have a density.
    pub fn from_measure(mu: &Measure, lo: f64, hi: f64, n_pts: usize) -> Result<Self> {
        match mu {
            Measure::Gaussian { mean, var } => {
                let sd = var.sqrt();
                Self::sample(lo, hi, n_pts, |q| normal_pdf((q - mean) / sd) / sd)
            }
            Measure::Grid(g) => Self::sample(lo, hi, n_pts, |q| g.value_at(q)),
            Measure::Empirical(_) => {
                Err(Error::Unsupported("an empirical measure has no density to sample".into()))
            }
        }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn n_pts(&self) -> usize {
        self.values.len()
    }

    pub fn dx(&self) -> f64 {
        (self.hi - self.lo) / (self.values.len() - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.dx()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self { lo: self.lo, hi: self.hi, values }
    }

    /// Trapezoid rule for `∫ f(q) u(q) dq` on the nodes.
    pub fn trapezoid(&self, f: impl Fn(f64) -> f64) -> f64 {
        trapezoid_weighted(self.lo, self.dx(), &self.values, f)
    }

    pub fn mass(&self) -> f64 {
        self.trapezoid(|_| 1.0)
    }

    /// Raw moment `∫ q^k u(q) dq` (not normalised by the mass).
    pub fn moment(&self, k: i32) -> f64 {
        self.trapezoid(|q| q.powi(k))
    }

    /// Central second moment of the normalised density.
    pub fn variance(&self) -> f64 {
        let m0 = self.mass();
        let m1 = self.moment(1) / m0;
        self.moment(2) / m0 - m1 * m1
    }

    /// Most negative nodal value, or zero when the density is nonnegative.
    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::min)
    }

    /// Linear interpolant of the nodal values, zero outside `[lo, hi]`.
    pub fn value_at(&self, x: f64) -> f64 {
        if !(x >= self.lo && x <= self.hi) {
            return 0.0;
        }
        let dx = self.dx();
        let s = (x - self.lo) / dx;
        let i = (s.floor() as usize).min(self.values.len() - 2);
        let theta = s - i as f64;
        (1.0 - theta) * self.values[i] + theta * self.values[i + 1]
    }

    /// The same nodal values on the grid `[lo + w, hi + w]`; an exact
    /// translation of the measure.
    pub fn translated(&self, w: f64) -> Self {
        Self { lo: self.lo + w, hi: self.hi + w, values: self.values.clone() }
    }

    /// Profile translated by `w`, resampled onto the same nodes (mass moved
    /// past either end is lost).
    pub fn shifted(&self, w: f64) -> Self {
        let dx = self.dx();
        let values = (0..self.values.len())
            .map(|i| self.value_at(self.lo + i as f64 * dx - w))
            .collect();
        self.with_values(values)
    }

    /// Cumulative mass at each node (trapezoid cell masses), starting at 0.
    pub(crate) fn cumulative(&self) -> Vec<f64> {
        let dx = self.dx();
        let mut acc = Vec::with_capacity(self.values.len());
        let mut c = 0.0;
        acc.push(0.0);
        for w in self.values.windows(2) {
            c += 0.5 * dx * (w[0] + w[1]);
            acc.push(c);
        }
        acc
    }
}

pub(crate) fn trapezoid_weighted(lo: f64, dx: f64, values: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let n = values.len();
    let mut acc = 0.0;
    for (i, &u) in values.iter().enumerate() {
        let w = if i == 0 || i + 1 == n { 0.5 } else { 1.0 };
        acc += w * f(lo + i as f64 * dx) * u;
    }
    acc * dx
}

/// A cross-bridge distribution `μ`.
#[derive(Debug, Clone, PartialEq)]
pub enum Measure {
    Empirical(EmpiricalMeasure),
    Grid(GridDensity),
    /// One-dimensional normal distribution with `var > 0`.
    Gaussian { mean: f64, var: f64 },
}

impl Measure {
    pub fn gaussian(mean: f64, var: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(invalid("gaussian mean must be finite"));
        }
        if !(var.is_finite() && var > 0.0) {
            return Err(invalid(format!("gaussian variance must be > 0, got {var}")));
        }
        Ok(Measure::Gaussian { mean, var })
    }

    /// Normal law `N(mean, var)`; `var = 0` degenerates to the Dirac mass at `mean`.
    pub fn normal(mean: f64, var: f64) -> Result<Self> {
        if var == 0.0 {
            Ok(Measure::Empirical(EmpiricalMeasure::dirac(&[mean])?))
        } else {
            Self::gaussian(mean, var)
        }
    }

    pub fn dirac(point: &[f64]) -> Result<Self> {
        Ok(Measure::Empirical(EmpiricalMeasure::dirac(point)?))
    }

    pub fn dim(&self) -> usize {
        match self {
            Measure::Empirical(e) => e.dim(),
            _ => 1,
        }
    }

    /// Total mass. Exactly one except for grid densities.
    pub fn mass(&self) -> f64 {
        match self {
            Measure::Grid(g) => g.mass(),
            _ => 1.0,
        }
    }

    /// `∫ q dμ`; trapezoid rule for grid densities.
    pub fn first_moment(&self) -> Result<DVector<f64>> {
        let m = match self {
            Measure::Empirical(e) => e.mean(),
            Measure::Grid(g) => DVector::from_element(1, g.moment(1)),
            Measure::Gaussian { mean, .. } => DVector::from_element(1, *mean),
        };
        if m.iter().any(|x| !x.is_finite()) {
            return Err(invalid("measure has no finite first moment"));
        }
        Ok(m)
    }

    /// `∫ qᵀ A q dμ` for a symmetric `A` of matching dimension.
    pub fn quadratic_moment(&self, a: &DMatrix<f64>) -> Result<f64> {
        if a.nrows() != self.dim() || a.ncols() != self.dim() {
            return Err(invalid("quadratic form dimension mismatch"));
        }
        let v = match self {
            Measure::Empirical(e) => (0..e.len())
                .map(|i| {
                    let q = DVector::from_column_slice(e.atom(i));
                    e.weights()[i] * q.dot(&(a * &q))
                })
                .sum(),
            Measure::Grid(g) => a[(0, 0)] * g.moment(2),
            Measure::Gaussian { mean, var } => a[(0, 0)] * (mean * mean + var),
        };
        Ok(v)
    }

    /// Central second moment of a 1-D measure.
    pub fn variance(&self) -> Result<f64> {
        match self {
            Measure::Gaussian { var, .. } => Ok(*var),
            Measure::Grid(g) => Ok(g.variance()),
            Measure::Empirical(e) if e.dim() == 1 => {
                let m = e.mean()[0];
                Ok(e.atoms().iter().zip(e.weights()).map(|(x, w)| w * (x - m) * (x - m)).sum())
            }
            Measure::Empirical(_) => Err(Error::Unsupported("variance of a multi-dimensional measure".into())),
        }
    }

    /// Pushforward under the translation `q ↦ q + w` (grids move with it).
    pub fn shifted(&self, w: &DVector<f64>) -> Result<Self> {
        if w.len() != self.dim() {
            return Err(invalid(format!("shift of length {} for a measure in R^{}", w.len(), self.dim())));
        }
        Ok(match self {
            Measure::Empirical(e) => Measure::Empirical(e.shifted(w.as_slice())),
            Measure::Grid(g) => Measure::Grid(g.translated(w[0])),
            Measure::Gaussian { mean, var } => Measure::Gaussian { mean: mean + w[0], var: *var },
        })
    }

    pub fn shifted_by(&self, w: f64) -> Result<Self> {
        self.shifted(&DVector::from_element(1, w))
    }
}
