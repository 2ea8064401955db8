//! End-to-end acceptance checks on the reference parameter set. Prints one
//! PASS/FAIL line per criterion and exits non-zero if any of them fails.

use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;

use pks_core::config::default_n_values;
use pks_core::harness::{consistency_experiment, mf_error_curve, run_mc_study, GridSpec, Scenario};
use pks_core::meanfield::{commutation_check, energy_kinetic, KineticOptions};
use pks_core::metrics::{
    dobrushin_check, dobrushin_constants, w1, w1_cdf, w1_dual_lower_bound, w1_shift_property, KineticInit, PiecewiseLinear,
};
use pks_core::microsim::{energy_micro, explicit_solution, integrate_micro, MicroTrajectory};
use pks_core::rng::{open_unit, stream};
use pks_core::{EmpiricalMeasure, GridDensity, Measure, ModelParams, Result};

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Outcome {
    let (pass, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome { name, pass, detail }
}

fn secs(d: Duration) -> String {
    format!("{:.2} s", d.as_secs_f64())
}

fn micro_run(sc: &Scenario) -> Result<(MicroTrajectory, f64, Duration)> {
    let ens = sc.draw_ensemble()?;
    let started = Instant::now();
    let traj = integrate_micro(&sc.params, &sc.initial_macro(), &ens, sc.t_end, &sc.micro_options())?;
    Ok((traj, ens.mean()[0], started.elapsed()))
}

fn seeded(seed: u64) -> Scenario {
    Scenario { seed, ..Scenario::table1() }
}

fn oracle_equivalence() -> Result<(bool, String)> {
    let sc = Scenario::table1();
    let (traj, mean, elapsed) = micro_run(&sc)?;
    let exact = explicit_solution(&sc.params, sc.r_in[0], sc.s_in[0], mean)?;
    let dev = traj
        .times
        .iter()
        .zip(&traj.macro_states)
        .map(|(t, m)| {
            let (r, s) = exact.eval(*t);
            (m.r[0] - r).abs().max((m.s[0] - s).abs())
        })
        .fold(0.0, f64::max);
    let ok = dev <= 1e-6 && elapsed < Duration::from_secs(5);
    Ok((ok, format!("max deviation {dev:.2e} (<= 1e-6), runtime {} (< 5 s)", secs(elapsed))))
}

fn equilibrium() -> Result<(bool, String)> {
    let sc = Scenario::table1();
    let r0 = sc.params.equilibrium(&sc.r_in, &sc.mu_in)?[0];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for seed in 0..10 {
        let (traj, _, _) = micro_run(&seeded(seed))?;
        for m in &traj.macro_states {
            lo = lo.min(m.r[0]);
            hi = hi.max(m.r[0]);
        }
    }
    let ok = (r0 - 1.5).abs() <= 1e-9 && lo >= 1.0 - 0.15 && hi <= 2.0 + 0.15;
    Ok((ok, format!("r0 = {r0:.12}, micro r(t) range [{lo:.4}, {hi:.4}] within [0.85, 2.15] over 10 seeds")))
}

fn constraint_invariance() -> Result<(bool, String)> {
    let (mut i3, mut i2) = (0.0f64, 0.0f64);
    for seed in 0..10 {
        let res = micro_run(&seeded(seed))?.0.max_residuals();
        i3 = i3.max(res.index3);
        i2 = i2.max(res.index2);
    }
    Ok((i3 <= 1e-6 && i2 <= 1e-6, format!("index-3 {i3:.2e}, index-2 {i2:.2e} (<= 1e-6) over 10 seeds")))
}

fn energy() -> Result<(bool, String)> {
    let started = Instant::now();
    let sc = Scenario::table1();
    let p = &sc.params;
    let micro = energy_micro(p, &micro_run(&sc)?.0).relative_drift();
    let moment_traj = sc.kinetic()?;
    let moment = energy_kinetic(p, &moment_traj)?;
    let pde = energy_kinetic(p, &sc.transport()?)?;
    let (e0, e1) = (pde.e_total[0], *pde.e_total.last().unwrap());
    // U_q of the exact solution oscillates, so growth is measured as the
    // excess over it at equal phase (t = 0, T, 2T)
    let omega = (p.effective_stiffness()[(0, 0)] / p.effective_mass()[(0, 0)]).sqrt();
    let period = 2.0 * std::f64::consts::PI / omega;
    let dt = sc.t_end / (sc.samples - 1) as f64;
    let excess: Vec<f64> = (0..)
        .map(|j| (j as f64 * period / dt).round() as usize)
        .take_while(|&k| k < pde.times.len())
        .map(|k| pde.u_q[k] - moment.u_q[k])
        .collect();
    let growing = excess.len() >= 3 && excess.windows(2).all(|w| w[1] > w[0]);
    let elapsed = started.elapsed();
    let ok = micro <= 1e-6 && moment.relative_drift() <= 1e-6 && e1 > e0 && growing && elapsed < Duration::from_secs(30);
    Ok((
        ok,
        format!(
            "micro drift {micro:.2e}, moment drift {:.2e} (<= 1e-6); transport E_total {e0:.4} -> {e1:.4}; \
             U_q excess at t = 0, T, 2T {:?}; runtime {} (< 30 s)",
            moment.relative_drift(),
            excess.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>(),
            secs(elapsed)
        ),
    ))
}

fn consistency() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for seed in 0..10 {
        worst = worst.max(consistency_experiment(&seeded(seed))?.deviation);
    }
    Ok((worst <= 1e-7, format!("max deviation {worst:.2e} (<= 1e-7) over 10 seeds")))
}

fn commutation() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for (mean, r_in) in [(-2.0, 1.0), (2.0, 1.0), (-2.0, 3.0), (0.5, -1.0)] {
        let sc = Scenario { mu_in: Measure::gaussian(mean, 1.0)?, r_in: DVector::from_element(1, r_in), ..Scenario::table1() };
        worst = worst.max(commutation_check(&sc.params, &sc.kinetic()?));
    }
    Ok((worst <= 1e-8, format!("max residual {worst:.2e} (<= 1e-8) over 4 initial data")))
}

fn mc_scaling() -> Result<(bool, String)> {
    let started = Instant::now();
    let sc = Scenario::table1();
    let study = run_mc_study(&sc, &default_n_values(), 100)?;
    let curve = mf_error_curve(&sc.params, &study);
    let slope = study.variance_slope().map(|s| s.0).unwrap_or(f64::NAN);
    let (first, last) = (curve.errors[0], *curve.errors.last().unwrap());
    let elapsed = started.elapsed();
    let ok = (-1.3..=-0.7).contains(&slope) && last < first && elapsed < Duration::from_secs(600);
    Ok((
        ok,
        format!(
            "variance slope {slope:.3} in [-1.3, -0.7]; mean-field error {first:.2e} at N = 4, {last:.2e} at N = 2048; runtime {}",
            secs(elapsed)
        ),
    ))
}

fn uniform(rng: &mut ChaCha8Rng, a: f64, b: f64) -> f64 {
    a + (b - a) * open_unit(rng)
}

fn dobrushin() -> Result<(bool, String)> {
    let p = ModelParams::table1();
    let k = dobrushin_constants(&p);
    let constants_ok = (k.l - 1.0667).abs() <= 1e-4 && (k.c - 6.375).abs() <= 1e-4;
    let mut rng = stream(2024, &[1]);
    let opts = KineticOptions { samples: 241, keep_snapshots: false, ..KineticOptions::default() };
    let mut violations = 0;
    let mut min_margin = f64::INFINITY;
    for _ in 0..100 {
        let draw = |rng: &mut ChaCha8Rng| -> Result<KineticInit> {
            // |Δr| + |Δs| + |Δmean| ≤ 0.5 on each side
            let w = [uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0)];
            let scale = 0.5 * uniform(rng, 0.0, 1.0) / (w[0] + w[1] + w[2]);
            let sign = |rng: &mut ChaCha8Rng| if open_unit(rng) < 0.5 { -1.0 } else { 1.0 };
            Ok(KineticInit::scalar(
                1.0 + sign(rng) * scale * w[0],
                sign(rng) * scale * w[1],
                Measure::gaussian(-2.0 + sign(rng) * scale * w[2], 1.0)?,
            ))
        };
        let (a, b) = (draw(&mut rng)?, draw(&mut rng)?);
        let rows = dobrushin_check(&p, &a, &b, 60.0, &opts)?;
        violations += rows.iter().filter(|r| !r.satisfied()).count();
        min_margin = rows.iter().map(|r| r.margin()).fold(min_margin, f64::min);
    }
    Ok((
        constants_ok && violations == 0,
        format!(
            "L = {:.6}, C = {:.6}; 100 random pairs, {violations} violated rows, smallest margin {min_margin:.3e}",
            k.l, k.c
        ),
    ))
}

fn random_measure(rng: &mut ChaCha8Rng) -> Result<Measure> {
    let kind = (open_unit(rng) * 4.0) as usize;
    let n = 1 + (open_unit(rng) * 20.0) as usize;
    Ok(match kind {
        0 => Measure::Empirical(EmpiricalMeasure::from_scalars((0..n).map(|_| uniform(rng, -10.0, 10.0)).collect())?),
        1 => {
            let xs = (0..n).map(|_| uniform(rng, -10.0, 10.0)).collect();
            let ws: Vec<f64> = (0..n).map(|_| uniform(rng, 0.05, 1.0)).collect();
            let total: f64 = ws.iter().sum();
            Measure::Empirical(EmpiricalMeasure::weighted(1, xs, ws.iter().map(|w| w / total).collect())?)
        }
        2 => Measure::gaussian(uniform(rng, -5.0, 5.0), uniform(rng, 0.05, 4.0))?,
        _ => {
            let lo = uniform(rng, -8.0, 2.0);
            let vals = (0..n + 2).map(|_| uniform(rng, 0.01, 1.0)).collect();
            Measure::Grid(GridDensity::new(lo, lo + uniform(rng, 1.0, 10.0), vals)?)
        }
    })
}

fn random_test_fn(rng: &mut ChaCha8Rng) -> Result<PiecewiseLinear> {
    let pieces = 1 + (open_unit(rng) * 7.0) as usize;
    let (mut xs, mut ys) = (vec![uniform(rng, -10.0, 0.0)], vec![uniform(rng, -5.0, 5.0)]);
    for _ in 0..pieces {
        let (dx, slope) = (uniform(rng, 0.01, 3.0), uniform(rng, -1.0, 1.0));
        let (x, y) = (*xs.last().unwrap(), *ys.last().unwrap());
        xs.push(x + dx);
        ys.push(y + slope * dx);
    }
    PiecewiseLinear::new(xs, ys)
}

fn w1_properties() -> Result<(bool, String)> {
    let mut rng = stream(2024, &[2]);
    let (mut metric_fail, mut dual_fail, mut shift_fail, mut sorted_fail) = (0, 0, 0, 0);
    let mut sorted_gap = 0.0f64;
    for _ in 0..1000 {
        let (a, b, c) = (random_measure(&mut rng)?, random_measure(&mut rng)?, random_measure(&mut rng)?);
        let (ab, ba, ac, cb) = (w1(&a, &b)?, w1(&b, &a)?, w1(&a, &c)?, w1(&c, &b)?);
        if !(ab >= 0.0 && (ab - ba).abs() <= 1e-12 * ab.max(1.0) && ab <= ac + cb + 1e-9 && w1(&a, &a)? <= 1e-12) {
            metric_fail += 1;
        }

        let family: Vec<PiecewiseLinear> =
            (0..1 + (open_unit(&mut rng) * 5.0) as usize).map(|_| random_test_fn(&mut rng)).collect::<Result<_>>()?;
        if w1_dual_lower_bound(&a, &b, &family)? > ab + 1e-9 {
            dual_fail += 1;
        }

        let (s1, s2) = (uniform(&mut rng, -5.0, 5.0), uniform(&mut rng, -5.0, 5.0));
        let (lhs, rhs) = w1_shift_property(&a, &b, s1, s2)?;
        if lhs > rhs + 1e-9 {
            shift_fail += 1;
        }

        let n = 1 + (open_unit(&mut rng) * 40.0) as usize;
        let x = Measure::Empirical(EmpiricalMeasure::from_scalars((0..n).map(|_| uniform(&mut rng, -20.0, 20.0)).collect())?);
        let y = Measure::Empirical(EmpiricalMeasure::from_scalars((0..n).map(|_| uniform(&mut rng, -20.0, 20.0)).collect())?);
        let (sorted, cdf) = (w1(&x, &y)?, w1_cdf(&x, &y)?);
        let gap = (sorted - cdf).abs() / sorted.max(1.0);
        sorted_gap = sorted_gap.max(gap);
        if gap > 1e-12 {
            sorted_fail += 1;
        }
    }
    let ok = metric_fail + dual_fail + shift_fail + sorted_fail == 0;
    Ok((
        ok,
        format!(
            "1000 trials: metric {metric_fail}, duality {dual_fail}, shift {shift_fail} failures; \
             sorted vs CDF max gap {sorted_gap:.1e} (<= 1e-12)"
        ),
    ))
}

fn transport_gap(n_pts: usize) -> Result<f64> {
    let sc = Scenario { grid: GridSpec { n_pts, ..GridSpec::default() }, ..Scenario::table1() };
    let (pde, moment) = (sc.transport()?, sc.kinetic()?);
    Ok(pde.macro_states.iter().zip(&moment.macro_states).map(|(a, b)| (a.r[0] - b.r[0]).abs()).fold(0.0, f64::max))
}

fn transport_vs_moment() -> Result<(bool, String)> {
    let (coarse, fine) = (transport_gap(101)?, transport_gap(201)?);
    let ratio = coarse / fine;
    Ok((
        coarse <= 0.02 && ratio >= 1.5,
        format!("max |Δr| {coarse:.4} on 101 points (<= 0.02), {fine:.4} on 201 points, ratio {ratio:.2} (>= 1.5)"),
    ))
}

fn main() {
    let outcomes = [
        check("oracle equivalence", oracle_equivalence),
        check("equilibrium reproduction", equilibrium),
        check("constraint invariance", constraint_invariance),
        check("energy", energy),
        check("consistency", consistency),
        check("commutation", commutation),
        check("Monte-Carlo scaling", mc_scaling),
        check("Dobrushin estimate", dobrushin),
        check("W1 properties", w1_properties),
        check("transport vs moment ODE", transport_vs_moment),
    ];
    let failed: Vec<&Outcome> = outcomes.iter().filter(|o| !o.pass).collect();
    println!("{} of {} criteria passed", outcomes.len() - failed.len(), outcomes.len());
    if !failed.is_empty() {
        for o in &failed {
            eprintln!("failed: {} ({})", o.name, o.detail);
        }
        std::process::exit(1);
    }
}
