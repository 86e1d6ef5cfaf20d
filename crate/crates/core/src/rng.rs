//! Reproducible per-path random streams.
//!
//! Every simulated path owns a ChaCha8 stream keyed by the master seed and
//! selected by the path index, so a batch is bit-identical no matter how its
//! paths are scheduled across threads. Gaussian increments use the ziggurat
//! sampler of `rand_distr::StandardNormal`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

/// Stream `stream` of the generator family keyed by `master_seed`.
pub fn stream(master_seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

#[inline]
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Fill `out` with independent N(0, variance) draws.
#[inline]
pub fn fill_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64, out: &mut [f64]) {
    let sd = variance.sqrt();
    for v in out.iter_mut() {
        *v = sd * standard_normal(rng);
    }
}

/// A uniformly distributed unit vector in ℝ^d.
pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| standard_normal(rng)).collect();
        let n = crate::geometry::norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}
