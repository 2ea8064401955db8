//! Monge–Kantorovich distance on the line and the linear Dobrushin estimate.
//!
//! On `R` the W1 distance is the L1 distance of the cumulative distribution
//! functions. Grid densities are normalised by their mass before comparison,
//! so a truncated density is treated as the probability measure it
//! approximates.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::meanfield::{integrate_moment_ode, pushforward, KineticOptions};
use crate::measure::{normal_cdf, normal_pdf, EmpiricalMeasure, GridDensity, Measure};
use crate::model::ModelParams;

/// Half-width, in standard deviations, beyond which Gaussian tails are ignored.
const GAUSS_SPAN: f64 = 12.0;
const QUAD_TOL: f64 = 1e-13;

enum Cdf<'a> {
    Step { xs: Vec<f64>, cum: Vec<f64> },
    Grid { g: &'a GridDensity, cum: Vec<f64>, mass: f64 },
    Normal { mean: f64, sd: f64 },
}

impl<'a> Cdf<'a> {
    fn new(mu: &'a Measure) -> Result<Self> {
        match mu {
            Measure::Empirical(e) => {
                let (xs, ws) = e.sorted_1d();
                let cum = ws
                    .iter()
                    .scan(0.0, |acc, w| {
                        *acc += w;
                        Some(*acc)
                    })
                    .collect();
                Ok(Cdf::Step { xs, cum })
            }
            Measure::Grid(g) => {
                let mass = g.mass();
                if !(mass > 0.0) {
                    return Err(invalid("grid density has no mass"));
                }
                Ok(Cdf::Grid { g, cum: g.cumulative(), mass })
            }
            Measure::Gaussian { mean, var } => Ok(Cdf::Normal { mean: *mean, sd: var.sqrt() }),
        }
    }

    fn eval(&self, x: f64) -> f64 {
        match self {
            Cdf::Step { xs, cum } => {
                let k = xs.partition_point(|&a| a <= x);
                if k == 0 {
                    0.0
                } else {
                    cum[k - 1]
                }
            }
            Cdf::Grid { g, cum, mass } => {
                if x <= g.lo() {
                    return 0.0;
                }
                if x >= g.hi() {
                    return 1.0;
                }
                let dx = g.dx();
                let s = (x - g.lo()) / dx;
                let i = (s.floor() as usize).min(g.n_pts() - 2);
                let h = x - g.node(i);
                let (u0, u1) = (g.values()[i], g.values()[i + 1]);
                (cum[i] + u0 * h + 0.5 * (u1 - u0) / dx * h * h) / mass
            }
            Cdf::Normal { mean, sd } => normal_cdf((x - mean) / sd),
        }
    }

    fn push_breakpoints(&self, out: &mut Vec<f64>) {
        match self {
            Cdf::Step { xs, .. } => out.extend_from_slice(xs),
            Cdf::Grid { g, .. } => out.extend((0..g.n_pts()).map(|i| g.node(i))),
            Cdf::Normal { mean, sd } => {
                // subdivide so that each piece is smooth on the scale of sd
                out.extend((-48..=48).map(|k| mean + k as f64 * GAUSS_SPAN / 48.0 * sd));
            }
        }
    }

    fn is_normal(&self) -> bool {
        matches!(self, Cdf::Normal { .. })
    }
}

/// `∫_a^b |c0 + c1 t + c2 t²| dt` with `t` measured from `a`.
fn abs_quadratic_integral(c0: f64, c1: f64, c2: f64, len: f64) -> f64 {
    let prim = |t: f64| c0 * t + 0.5 * c1 * t * t + c2 * t * t * t / 3.0;
    let mut cuts = vec![0.0, len];
    if c2.abs() > 1e-300 {
        let disc = c1 * c1 - 4.0 * c2 * c0;
        if disc > 0.0 {
            let sq = disc.sqrt();
            // numerically stable roots
            let qq = -0.5 * (c1 + c1.signum() * sq);
            for root in [qq / c2, if qq != 0.0 { c0 / qq } else { f64::NAN }] {
                if root > 0.0 && root < len {
                    cuts.push(root);
                }
            }
        }
    } else if c1.abs() > 1e-300 {
        let root = -c0 / c1;
        if root > 0.0 && root < len {
            cuts.push(root);
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.windows(2).map(|w| (prim(w[1]) - prim(w[0])).abs()).sum()
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 40)
}

fn sorted_atom_distance(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> f64 {
    let mut xa = a.atoms().to_vec();
    let mut xb = b.atoms().to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    xa.iter().zip(&xb).map(|(x, y)| (x - y).abs()).sum::<f64>() / xa.len() as f64
}

/// `∫ Φ(z) dz` up to a constant.
fn normal_cdf_antiderivative(z: f64) -> f64 {
    z * normal_cdf(z) + normal_pdf(z)
}

/// Exact `∫ |F_emp − Φ((x − mean)/sd)| dx` for a step CDF with jumps at the
/// sorted atoms `xs`. On each gap the step CDF is a constant `c` and the
/// normal CDF crosses it at most once, at `mean + sd·Φ⁻¹(c)`.
fn gaussian_vs_step(mean: f64, sd: f64, xs: &[f64], cum: &[f64]) -> f64 {
    let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
    let z = |x: f64| (x - mean) / sd;
    // ∫_{za}^{zb} (Φ − c) dz in standardised units
    let signed = |za: f64, zb: f64, c: f64| {
        normal_cdf_antiderivative(zb) - normal_cdf_antiderivative(za) - c * (zb - za)
    };
    let mut total = sd * normal_cdf_antiderivative(z(xs[0]));
    total += sd * normal_cdf_antiderivative(-z(xs[xs.len() - 1]));
    for k in 0..xs.len() - 1 {
        let (za, zb, c) = (z(xs[k]), z(xs[k + 1]), cum[k]);
        if zb <= za {
            continue;
        }
        let zc = if c <= 0.0 {
            f64::NEG_INFINITY
        } else if c >= 1.0 {
            f64::INFINITY
        } else {
            std_normal.inverse_cdf(c)
        };
        total += sd * if zc > za && zc < zb {
            -signed(za, zc, c) + signed(zc, zb, c)
        } else {
            signed(za, zb, c).abs()
        };
    }
    total
}

/// W1 through `∫ |F_a − F_b| dx` over the merged breakpoints of both CDFs.
/// Exact for empirical and grid measures and for a Gaussian against an
/// empirical measure; other pairs involving a Gaussian use adaptive Simpson
/// quadrature.
pub fn w1_cdf(a: &Measure, b: &Measure) -> Result<f64> {
    check_1d(a)?;
    check_1d(b)?;
    let (fa, fb) = (Cdf::new(a)?, Cdf::new(b)?);
    match (&fa, &fb) {
        (Cdf::Normal { mean, sd }, Cdf::Step { xs, cum }) | (Cdf::Step { xs, cum }, Cdf::Normal { mean, sd }) => {
            return Ok(gaussian_vs_step(*mean, *sd, xs, cum));
        }
        _ => {}
    }
    let mut pts = Vec::new();
    fa.push_breakpoints(&mut pts);
    fb.push_breakpoints(&mut pts);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let smooth = fa.is_normal() || fb.is_normal();
    let d = |x: f64| fa.eval(x) - fb.eval(x);
    let mut total = 0.0;
    for w in pts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let len = hi - lo;
        if len <= 0.0 {
            continue;
        }
        if smooth {
            total += adaptive_simpson(&|x: f64| d(x).abs(), lo, hi, QUAD_TOL);
        } else {
            // the difference is a quadratic on the open interval; recover it
            // from three interior samples
            let (y1, y2, y3) = (d(lo + 0.25 * len), d(lo + 0.5 * len), d(lo + 0.75 * len));
            let h = 0.25 * len;
            let c2 = (y1 - 2.0 * y2 + y3) / (2.0 * h * h);
            let c1 = (y2 - y1) / h - c2 * 3.0 * h;
            let c0 = y1 - c1 * h - c2 * h * h;
            total += abs_quadratic_integral(c0, c1, c2, len);
        }
    }
    Ok(total)
}

fn check_1d(mu: &Measure) -> Result<()> {
    if mu.dim() != 1 {
        return Err(Error::Unsupported("W1 is implemented for one-dimensional measures".into()));
    }
    if mu.first_moment()?.iter().any(|m| !m.is_finite()) {
        return Err(invalid("measure has no finite first moment"));
    }
    Ok(())
}

/// Monge–Kantorovich distance with exponent 1 between 1-D measures.
pub fn w1(a: &Measure, b: &Measure) -> Result<f64> {
    check_1d(a)?;
    check_1d(b)?;
    match (a, b) {
        (Measure::Empirical(x), Measure::Empirical(y))
            if x.len() == y.len() && x.has_uniform_weights() && y.has_uniform_weights() =>
        {
            Ok(sorted_atom_distance(x, y))
        }
        (Measure::Gaussian { mean: m1, var: v1 }, Measure::Gaussian { mean: m2, var: v2 }) if v1 == v2 => {
            Ok((m1 - m2).abs())
        }
        _ => w1_cdf(a, b),
    }
}

/// Piecewise-linear function through `(xs[i], ys[i])`, extended linearly
/// beyond the outer knots.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() < 2 || xs.len() != ys.len() {
            return Err(invalid("piecewise-linear function needs at least two knots of matching length"));
        }
        if xs.windows(2).any(|w| !(w[0] < w[1])) || xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(invalid("knots must be finite and strictly increasing"));
        }
        Ok(Self { xs, ys })
    }

    /// The identity `q ↦ q`.
    pub fn identity() -> Self {
        Self { xs: vec![0.0, 1.0], ys: vec![0.0, 1.0] }
    }

    fn slope(&self, i: usize) -> f64 {
        (self.ys[i + 1] - self.ys[i]) / (self.xs[i + 1] - self.xs[i])
    }

    fn segment(&self, x: f64) -> usize {
        self.xs.partition_point(|&k| k <= x).clamp(1, self.xs.len() - 1) - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        let i = self.segment(x);
        self.ys[i] + self.slope(i) * (x - self.xs[i])
    }

    pub fn lipschitz(&self) -> f64 {
        (0..self.xs.len() - 1).map(|i| self.slope(i).abs()).fold(0.0, f64::max)
    }

    /// `∫ φ dμ`; grid densities are normalised by their mass.
    pub fn integrate(&self, mu: &Measure) -> Result<f64> {
        check_1d(mu)?;
        match mu {
            Measure::Empirical(e) => Ok(e.atoms().iter().zip(e.weights()).map(|(x, w)| w * self.eval(*x)).sum()),
            Measure::Gaussian { mean, var } => Ok(self.integrate_gaussian(*mean, var.sqrt())),
            Measure::Grid(g) => Ok(self.integrate_grid(g)),
        }
    }

    fn integrate_gaussian(&self, mean: f64, sd: f64) -> f64 {
        // E[(α + βX) 1{a < X < b}] for X ~ N(mean, sd²), per linear piece
        let n = self.xs.len();
        let mut total = 0.0;
        for i in 0..n - 1 {
            let a = if i == 0 { f64::NEG_INFINITY } else { self.xs[i] };
            let b = if i + 2 == n { f64::INFINITY } else { self.xs[i + 1] };
            let beta = self.slope(i);
            let alpha = self.ys[i] - beta * self.xs[i];
            let (za, zb) = ((a - mean) / sd, (b - mean) / sd);
            let prob = normal_cdf(zb) - normal_cdf(za);
            let pdf = |z: f64| if z.is_finite() { normal_pdf(z) } else { 0.0 };
            total += alpha * prob + beta * (mean * prob + sd * (pdf(za) - pdf(zb)));
        }
        total
    }

    fn integrate_grid(&self, g: &GridDensity) -> f64 {
        let mut pts: Vec<f64> = (0..g.n_pts()).map(|i| g.node(i)).collect();
        pts.extend(self.xs.iter().copied().filter(|&x| x > g.lo() && x < g.hi()));
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        // both factors are linear on each piece, so Simpson's rule is exact
        let f = |x: f64| self.eval(x) * g.value_at(x);
        let total: f64 = pts
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0], w[1]);
                let m = 0.5 * (a + b);
                let fa = self.eval(a) * g.value_at(a.max(g.lo()));
                let fb = self.eval(b) * g.value_at(b.min(g.hi()));
                (b - a) / 6.0 * (fa + 4.0 * f(m) + fb)
            })
            .sum();
        total / g.mass()
    }
}

/// Lower bound `max_φ |∫φ da − ∫φ db|` on W1 over 1-Lipschitz test functions.
pub fn w1_dual_lower_bound(a: &Measure, b: &Measure, test_fns: &[PiecewiseLinear]) -> Result<f64> {
    let mut best = 0.0f64;
    for phi in test_fns {
        let lip = phi.lipschitz();
        if lip > 1.0 + 1e-12 {
            return Err(invalid(format!("test function has Lipschitz constant {lip} > 1")));
        }
        best = best.max((phi.integrate(a)? - phi.integrate(b)?).abs());
    }
    Ok(best)
}

/// `(W1(T_{w₁}a, T_{w₂}b), W1(a, b) + |w₂ − w₁|)`; the first never exceeds the
/// second.
pub fn w1_shift_property(a: &Measure, b: &Measure, w1_shift: f64, w2_shift: f64) -> Result<(f64, f64)> {
    let lhs = w1(&a.shifted_by(w1_shift)?, &b.shifted_by(w2_shift)?)?;
    Ok((lhs, w1(a, b)? + (w2_shift - w1_shift).abs()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DobrushinConstants {
    pub l: f64,
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Constants `L` and `C` of the stability estimate
/// `‖Δr(t)‖ + ‖Δs(t)‖ + W1(μ₁(t), μ₂(t)) ≤ C e^{Lt} (‖Δr^in‖ + ‖Δs^in‖ + W1(μ₁^in, μ₂^in))`.
pub fn dobrushin_constants(p: &ModelParams) -> DobrushinConstants {
    let m_inv = p.effective_mass_inv();
    let g = p.g_r();
    let g_norm = spectral_norm(g);
    let l = spectral_norm(m_inv) * (spectral_norm(p.gamma_r()) + p.n_real() * spectral_norm(&(g.transpose() * p.gamma_q() * g))) + 1.0;
    let c1 = spectral_norm(&(m_inv * p.force_coupling())) * (g_norm + p.n_q() as f64);
    let c2 = 2.0 * (1.0 + c1 / l);
    DobrushinConstants { l, c: c2 * (2.0 + g_norm), c1, c2 }
}

/// Initial data of one kinetic solution.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticInit {
    pub r_in: DVector<f64>,
    pub s_in: DVector<f64>,
    pub mu_in: Measure,
}

impl KineticInit {
    pub fn scalar(r_in: f64, s_in: f64, mu_in: Measure) -> Self {
        Self { r_in: DVector::from_element(1, r_in), s_in: DVector::from_element(1, s_in), mu_in }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DobrushinRow {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
}

impl DobrushinRow {
    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }

    pub fn satisfied(&self) -> bool {
        self.lhs <= self.rhs
    }
}

/// Evaluates both sides of the stability estimate along two moment-ODE
/// solutions sampled as in `opts`.
pub fn dobrushin_check(
    p: &ModelParams,
    a: &KineticInit,
    b: &KineticInit,
    t_end: f64,
    opts: &KineticOptions,
) -> Result<Vec<DobrushinRow>> {
    let ta = integrate_moment_ode(p, &a.r_in, &a.s_in, &a.mu_in, t_end, opts)?;
    let tb = integrate_moment_ode(p, &b.r_in, &b.s_in, &b.mu_in, t_end, opts)?;
    let k = dobrushin_constants(p);
    let initial = (&a.r_in - &b.r_in).norm() + (&a.s_in - &b.s_in).norm() + w1(&a.mu_in, &b.mu_in)?;
    ta.times
        .iter()
        .zip(ta.macro_states.iter().zip(&tb.macro_states))
        .map(|(t, (ma, mb))| {
            let mu_a = pushforward(p, &a.mu_in, &ma.r, &a.r_in)?;
            let mu_b = pushforward(p, &b.mu_in, &mb.r, &b.r_in)?;
            let lhs = (&ma.r - &mb.r).norm() + (&ma.s - &mb.s).norm() + w1(&mu_a, &mu_b)?;
            Ok(DobrushinRow { t: *t, lhs, rhs: k.c * (k.l * t).exp() * initial })
        })
        .collect()
}
