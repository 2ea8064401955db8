//! Reproducible random streams for initial particle ensembles.
//!
//! Every `(seed, N, sample)` triple gets its own ChaCha8 stream, so results do
//! not depend on how work items are scheduled across threads. Normal variates
//! are produced by inverting the normal CDF of one uniform draw each.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::measure::Measure;
use crate::model::ParticleEnsemble;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of stream indices.
pub fn stream_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(base), |acc, &x| splitmix64(acc ^ splitmix64(x)))
}

pub fn stream(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(base, path))
}

/// Uniform draw in the open interval (0, 1).
pub fn open_unit(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Draws `n` i.i.d. particles from `mu`.
pub fn sample_ensemble(mu: &Measure, n: usize, rng: &mut impl RngCore) -> Result<ParticleEnsemble> {
    if n == 0 {
        return Err(invalid("cannot sample an empty ensemble"));
    }
    match mu {
        Measure::Gaussian { mean, var } => {
            let normal = Normal::new(*mean, var.sqrt()).map_err(|e| invalid(e.to_string()))?;
            let q = (0..n).map(|_| normal.inverse_cdf(open_unit(rng))).collect();
            ParticleEnsemble::from_scalars(q)
        }
        Measure::Empirical(e) => {
            let cum: Vec<f64> = e
                .weights()
                .iter()
                .scan(0.0, |acc, w| {
                    *acc += w;
                    Some(*acc)
                })
                .collect();
            let mut q = Vec::with_capacity(n * e.dim());
            for _ in 0..n {
                let u = open_unit(rng) * cum[cum.len() - 1];
                let idx = cum.partition_point(|&c| c < u).min(e.len() - 1);
                q.extend_from_slice(e.atom(idx));
            }
            ParticleEnsemble::new(e.dim(), q)
        }
        Measure::Grid(_) => Err(Error::Unsupported("sampling from a grid density".into())),
    }
}
