//! Adaptive Dormand–Prince 5(4) integrator with 4th-order dense output.
//!
//! The error estimate uses the embedded 4th-order solution and the mixed
//! absolute/relative RMS norm; output times are served from the continuous
//! extension so that the step sequence is independent of the output grid.

use crate::error::{Error, Result};

/// Tolerances and step limits shared by every solver in the crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { rtol: 1e-8, atol: 1e-8, max_step: f64::INFINITY, max_steps: 1_000_000 }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { rtol: tol, atol: tol, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolverStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// States at the requested output times.
#[derive(Debug, Clone)]
pub struct OdeOutput {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub stats: SolverStats,
}

/// `n` equidistant times covering `[0, t_end]` (a single time when `t_end = 0`).
pub fn uniform_times(t_end: f64, n: usize) -> Vec<f64> {
    if t_end == 0.0 || n < 2 {
        return vec![0.0];
    }
    (0..n).map(|i| t_end * i as f64 / (n - 1) as f64).collect()
}

// Dormand & Prince (1980) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// dense output (Hairer, Nørsett & Wanner, DOPRI5 `contd5`)
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

struct Workspace {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
}

fn rms_norm(v: &[f64], scale: impl Fn(usize) -> f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let s: f64 = v.iter().enumerate().map(|(i, x)| (x / scale(i)).powi(2)).sum();
    (s / v.len() as f64).sqrt()
}

fn initial_step<F>(f: &mut F, t0: f64, y0: &[f64], f0: &[f64], opts: &SolverOptions, span: f64) -> (f64, usize)
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let sc = |i: usize| opts.atol + opts.rtol * y0[i].abs();
    let d0 = rms_norm(y0, sc);
    let d1 = rms_norm(f0, sc);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(span).min(opts.max_step);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, d)| y + h0 * d).collect();
    let mut f1 = vec![0.0; y0.len()];
    f(t0 + h0, &y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms_norm(&diff, sc) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    ((100.0 * h0).min(h1).min(span).min(opts.max_step), 1)
}

/// Integrates `y' = f(t, y)` from `times[0]` to `times.last()` and returns the
/// state at every entry of `times` (which must be non-decreasing).
pub fn integrate<F>(mut f: F, y0: &[f64], times: &[f64], opts: &SolverOptions) -> Result<OdeOutput>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if times.is_empty() {
        return Err(Error::InvalidArgument("no output times requested".into()));
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument("output times must be finite and non-decreasing".into()));
    }
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(Error::InvalidArgument("tolerances must be positive".into()));
    }
    if !(opts.max_step > 0.0) {
        return Err(Error::InvalidArgument("max_step must be positive".into()));
    }

    let n = y0.len();
    let t0 = times[0];
    let t_end = *times.last().unwrap();
    let mut stats = SolverStats::default();
    let mut out_states = Vec::with_capacity(times.len());
    let mut next_out = 0;
    while next_out < times.len() && times[next_out] <= t0 {
        out_states.push(y0.to_vec());
        next_out += 1;
    }
    if next_out == times.len() {
        return Ok(OdeOutput { times: times.to_vec(), states: out_states, stats });
    }

    let mut ws = Workspace {
        k: std::array::from_fn(|_| vec![0.0; n]),
        tmp: vec![0.0; n],
        y_new: vec![0.0; n],
    };
    let mut y = y0.to_vec();
    let mut t = t0;
    f(t, &y, &mut ws.k[0]);
    stats.evaluations += 1;
    let (mut h, evals) = initial_step(&mut f, t0, &y, &ws.k[0], opts, t_end - t0);
    stats.evaluations += evals;
    let mut last_rejected = false;

    while next_out < times.len() {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::IntegrationFailure { t, reason: format!("exceeded {} steps", opts.max_steps) });
        }
        let h_min = 16.0 * f64::EPSILON * t.abs().max(1.0);
        if h < h_min {
            return Err(Error::IntegrationFailure { t, reason: format!("step size underflow (h = {h:e})") });
        }
        h = h.min(opts.max_step);
        if t + h > t_end {
            h = t_end - t;
        }

        let Workspace { k, tmp, y_new } = &mut ws;
        let [k1, k2, k3, k4, k5, k6, k7] = k;
        for i in 0..n {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        f(t + C2 * h, tmp, k2);
        for i in 0..n {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * h, tmp, k3);
        for i in 0..n {
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * h, tmp, k4);
        for i in 0..n {
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * h, tmp, k5);
        for i in 0..n {
            tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f(t + h, tmp, k6);
        for i in 0..n {
            y_new[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        let t_new = t + h;
        f(t_new, y_new, k7);
        stats.evaluations += 6;

        for i in 0..n {
            tmp[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let err = rms_norm(tmp, |i| opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs()));
        if !err.is_finite() {
            return Err(Error::IntegrationFailure { t, reason: "non-finite error estimate".into() });
        }

        if err <= 1.0 {
            stats.accepted += 1;
            // serve every output time inside (t, t_new]
            while next_out < times.len() && (times[next_out] <= t_new || t_new >= t_end) {
                let theta = ((times[next_out] - t) / h).clamp(0.0, 1.0);
                let th1 = 1.0 - theta;
                let yo = (0..n)
                    .map(|i| {
                        let ydiff = y_new[i] - y[i];
                        let bspl = h * k1[i] - ydiff;
                        let r4 = ydiff - h * k7[i] - bspl;
                        let r5 = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
                        y[i] + theta * (ydiff + th1 * (bspl + theta * (r4 + th1 * r5)))
                    })
                    .collect();
                out_states.push(yo);
                next_out += 1;
            }
            std::mem::swap(&mut y, y_new);
            std::mem::swap(k1, k7);
            t = t_new;
            let fac = if err == 0.0 { FAC_MAX } else { SAFETY * err.powf(-0.2) };
            let fac_max = if last_rejected { 1.0 } else { FAC_MAX };
            h *= fac.clamp(FAC_MIN, fac_max);
            last_rejected = false;
        } else {
            stats.rejected += 1;
            h *= (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, 1.0);
            last_rejected = true;
        }
    }

    Ok(OdeOutput { times: times.to_vec(), states: out_states, stats })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_is_accurate() {
        let times = uniform_times(5.0, 51);
        let out = integrate(|_, y, dy| dy[0] = -y[0], &[1.0], &times, &SolverOptions::with_tol(1e-10)).unwrap();
        for (t, y) in out.times.iter().zip(&out.states) {
            assert!((y[0] - (-t).exp()).abs() < 1e-9, "t = {t}: {}", y[0]);
        }
    }

    #[test]
    fn harmonic_oscillator_dense_output() {
        // off-grid output times exercise the continuous extension
        let times: Vec<f64> = (0..300).map(|i| 0.1 * i as f64 + 0.0137).collect();
        let mut all = vec![0.0];
        all.extend(&times);
        let out = integrate(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            &[1.0, 0.0],
            &all,
            &SolverOptions::with_tol(1e-9),
        )
        .unwrap();
        for (t, y) in out.times.iter().zip(&out.states) {
            assert!((y[0] - t.cos()).abs() < 1e-7);
            assert!((y[1] + t.sin()).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_length_interval_returns_initial_state() {
        let out = integrate(|_, _, dy| dy[0] = 1.0, &[3.0], &[0.0], &SolverOptions::default()).unwrap();
        assert_eq!(out.states, vec![vec![3.0]]);
        assert_eq!(out.stats.evaluations, 0);
    }

    #[test]
    fn max_step_is_respected() {
        let times = uniform_times(10.0, 2);
        let opts = SolverOptions { max_step: 0.5, ..SolverOptions::default() };
        let out = integrate(|_, _, dy| dy[0] = 1.0, &[0.0], &times, &opts).unwrap();
        assert!(out.stats.accepted >= 20);
        assert!((out.states[1][0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn blow_up_reports_failure_time() {
        let times = uniform_times(2.0, 3);
        let err = integrate(|_, y, dy| dy[0] = y[0] * y[0], &[1.0], &times, &SolverOptions::default()).unwrap_err();
        match err {
            Error::IntegrationFailure { t, .. } => assert!(t > 0.9 && t < 1.0 + 1e-6, "t = {t}"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_unsorted_times() {
        assert!(integrate(|_, _, dy| dy[0] = 0.0, &[0.0], &[0.0, 2.0, 1.0], &SolverOptions::default()).is_err());
    }
}
