//! Seed derivation and Gaussian sampling helpers.
//!
//! Every stochastic stage derives its own ChaCha stream from a root seed and
//! a few context words, so results are independent of evaluation order.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; decorrelates nearby seed values.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Folds context words into a single derived seed.
pub fn mix(parts: &[u64]) -> u64 {
    let mut acc = 0x243f6a8885a308d3u64; // arbitrary odd constant
    for &p in parts {
        acc = splitmix64(acc ^ p);
    }
    acc
}

/// Deterministic stream for a (seed, context...) tuple.
pub fn stream(seed: u64, context: &[u64]) -> ChaCha8Rng {
    let mut parts = Vec::with_capacity(context.len() + 1);
    parts.push(seed);
    parts.extend_from_slice(context);
    ChaCha8Rng::seed_from_u64(mix(&parts))
}

/// One Box-Muller pair of independent standard normals.
pub fn normal_pair<R: Rng>(rng: &mut R) -> (f64, f64) {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = std::f64::consts::TAU * u2;
    (r * theta.cos(), r * theta.sin())
}

/// Standard-normal source that consumes Box-Muller pairs without waste.
pub struct NormalSource<R: Rng> {
    rng: R,
    spare: Option<f64>,
}

impl<R: Rng> NormalSource<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, spare: None }
    }

    pub fn next(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        let (a, b) = normal_pair(&mut self.rng);
        self.spare = Some(b);
        a
    }
}

/// Fills `out` with standard normals drawn from `rng`.
pub fn fill_normals<R: Rng>(rng: &mut R, out: &mut [f64]) {
    let mut src = NormalSource::new(rng);
    for v in out.iter_mut() {
        *v = src.next();
    }
}
