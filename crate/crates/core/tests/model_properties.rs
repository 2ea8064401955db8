use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use pks_core::meanfield::pushforward;
use pks_core::{EmpiricalMeasure, Measure, ModelParams};

fn scalar_params() -> impl Strategy<Value = ModelParams> {
    (1.0..50.0f64, 0.001..0.5f64, 0.0..3.0f64, 0.0..0.05f64, -2.0..2.0f64, 1.0..500.0f64, 1usize..600)
        .prop_map(|(mr, mq, gr, gq, g, nr, n)| ModelParams::scalar(mr, mq, gr, gq, g, nr, n).unwrap())
}

/// Random symmetric positive definite `d × d` matrix `AᵀA + εI`.
fn spd(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0..1.0f64, d * d).prop_map(move |v| {
        let a = DMatrix::from_vec(d, d, v);
        a.transpose() * &a + DMatrix::identity(d, d) * 0.1
    })
}

fn matrix_params() -> impl Strategy<Value = ModelParams> {
    (1usize..4, 1usize..4).prop_flat_map(|(n_r, n_q)| {
        (spd(n_r), spd(n_q), spd(n_r), spd(n_q), prop::collection::vec(-1.0..1.0f64, n_q * n_r), 1.0..100.0f64)
            .prop_map(move |(mr, mq, gr, gq, g, nr)| {
                ModelParams::new(mr, mq, gr, gq, DMatrix::from_vec(n_q, n_r, g), nr, 10).unwrap()
            })
    })
}

fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / a.amax().max(f64::MIN_POSITIVE)
}

proptest! {
    #[test]
    fn effective_matrices_are_symmetric(p in matrix_params()) {
        let m = p.effective_mass();
        let g = p.effective_stiffness();
        prop_assert!((&m - m.transpose()).amax() <= 1e-12 * m.amax());
        prop_assert!((&g - g.transpose()).amax() <= 1e-12 * g.amax());
    }

    #[test]
    fn particle_count_does_not_change_effective_quantities(p in scalar_params(), n in 1usize..5000) {
        let q = p.scale_particles(n).unwrap();
        prop_assert!(rel_diff(&p.effective_mass(), &q.effective_mass()) <= 1e-14);
        prop_assert!(rel_diff(&p.effective_stiffness(), &q.effective_stiffness()) <= 1e-14);
        // the simulated particles together always carry N_real realistic ones
        let total = q.particle_mass() * n as f64;
        prop_assert!(rel_diff(&(p.m_q() * p.n_real()), &total) <= 1e-12);
    }

    #[test]
    fn force_is_linear_in_the_first_moment(p in scalar_params(), xs in prop::collection::vec(-5.0..5.0f64, 1..30), w in -3.0..3.0f64) {
        let mu = Measure::Empirical(EmpiricalMeasure::from_scalars(xs).unwrap());
        let shifted = mu.shifted_by(w).unwrap();
        let lhs = p.mean_field_force(&shifted).unwrap() - p.mean_field_force(&mu).unwrap();
        // N_real G_rᵀ γ_q w, assembled from the raw parameters
        let rhs = p.n_real() * p.g_r()[(0, 0)] * p.gamma_q()[(0, 0)] * w;
        prop_assert!((lhs[0] - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
    }

    #[test]
    fn equilibrium_balances_the_mean_field_force(p in scalar_params(), r_in in -3.0..3.0f64, mean in -4.0..4.0f64, var in 0.1..2.0f64) {
        prop_assume!(p.gamma_r()[(0, 0)] > 0.05);
        let mu_in = Measure::gaussian(mean, var).unwrap();
        let r_in = DVector::from_element(1, r_in);
        let r0 = p.equilibrium(&r_in, &mu_in).unwrap();
        let mu0 = pushforward(&p, &mu_in, &r0, &r_in).unwrap();
        let residual = p.mean_field_force(&mu0).unwrap() - p.gamma_r() * &r0;
        let scale = (p.gamma_r() * &r0).amax().max(1.0);
        prop_assert!(residual.amax() <= 1e-10 * scale, "residual {}", residual.amax());
    }
}

#[test]
fn reference_equilibrium() {
    let p = ModelParams::table1();
    let r0 = p.equilibrium(&DVector::from_element(1, 1.0), &Measure::gaussian(-2.0, 1.0).unwrap()).unwrap();
    // γ_eff = 1 + 250·(1/250) = 2, force coupling = −1, (−1·1 − 2)·(−1)/2
    assert!((r0[0] - 1.5).abs() <= 1e-12);
    assert!((p.effective_mass()[(0, 0)] - 30.0).abs() <= 1e-12);
}
