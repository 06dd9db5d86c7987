//! Counter-based deterministic randomness and synthetic tensor generators.
//!
//! A [`SeededRng`] is a `(seed, counter)` pair. Each draw is a pure function
//! of both: the counter is pushed through the SplitMix64 finalizer after being
//! offset by a seed-dependent key. Independent streams for distinct purposes
//! come from [`SeededRng::derive`], which hashes the parent seed with a
//! caller-chosen tag. Nothing depends on call order across streams, so worker
//! streams reproduce regardless of scheduling.

use alloc::vec::Vec;

use crate::tensor::FlatTensor;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seed tags used across the crate so every stream stays disjoint.
pub mod stream {
    pub const SPIKE_MASK: u64 = 0x5350_494b;
    pub const STOCHASTIC_ROUNDING: u64 = 0x5352_4e44;
    pub const DATA: u64 = 0x4441_5441;
    pub const INIT: u64 = 0x494e_4954;
    pub const BATCH: u64 = 0x4241_5443;
    pub const TRIALS: u64 = 0x5452_4c53;
    pub const GRAD_COMPRESS: u64 = 0x4743_4d50;
    pub const WDIFF_COMPRESS: u64 = 0x5743_4d50;
    pub const VALIDATION: u64 = 0x5641_4c44;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeededRng {
    seed: u64,
    counter: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Independent stream keyed by `(self.seed, tag)`. The parent's counter is
    /// not consulted, so derivation is order-independent.
    pub fn derive(&self, tag: u64) -> SeededRng {
        SeededRng::new(mix64(
            mix64(self.seed ^ GOLDEN).wrapping_add(tag.wrapping_mul(GOLDEN)),
        ))
    }

    /// Draw at an explicit counter position without advancing.
    #[inline]
    pub fn at(&self, counter: u64) -> u64 {
        mix64(mix64(self.seed).wrapping_add(counter.wrapping_mul(GOLDEN)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = self.at(self.counter);
        self.counter += 1;
        v
    }

    /// Uniform in the half-open interval (0, 1], 53-bit resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    /// Standard normal via the cosine branch of Box-Muller on two draws.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
    }
}

/// `n` samples from N(mean, std²), each drawn with [`SeededRng::normal`] and
/// rounded to `f32`. `std == 0` yields a constant tensor.
pub fn fill_gaussian(rng: &mut SeededRng, n: usize, mean: f32, std: f32) -> FlatTensor {
    assert!(
        std >= 0.0 && std.is_finite() && mean.is_finite(),
        "invalid gaussian parameters"
    );
    let data: Vec<f32> = (0..n)
        .map(|_| {
            let z = rng.normal();
            (f64::from(mean) + f64::from(std) * z) as f32
        })
        .collect();
    FlatTensor::from_vec_unchecked(data)
}

/// Standard-normal elements, each multiplied by `spike_scale` with
/// probability `spike_prob`.
///
/// The Gaussian values consume `rng` exactly as [`fill_gaussian`] would; the
/// spike mask comes from a stream derived from `rng`'s seed, so
/// `spike_prob = 0` or `spike_scale = 1` reproduces the Gaussian tensor.
pub fn fill_spiky(rng: &mut SeededRng, n: usize, spike_prob: f64, spike_scale: f32) -> FlatTensor {
    assert!(
        (0.0..=1.0).contains(&spike_prob),
        "spike_prob must lie in [0, 1]"
    );
    assert!(
        spike_scale >= 1.0 && spike_scale.is_finite(),
        "spike_scale must be >= 1"
    );
    let mut mask = rng.derive(stream::SPIKE_MASK ^ rng.counter());
    let base = fill_gaussian(rng, n, 0.0, 1.0);
    let data = base
        .into_vec()
        .into_iter()
        .map(|v| {
            if mask.uniform() <= spike_prob {
                v * spike_scale
            } else {
                v
            }
        })
        .collect();
    FlatTensor::from_vec_unchecked(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_zero_variance() {
        assert!(fill_gaussian(&mut SeededRng::new(1), 0, 0.0, 1.0).is_empty());
        assert_eq!(
            fill_gaussian(&mut SeededRng::new(1), 4, 0.0, 0.0).as_slice(),
            &[0.0; 4]
        );
        assert_eq!(
            fill_gaussian(&mut SeededRng::new(1), 3, 2.5, 0.0).as_slice(),
            &[2.5; 3]
        );
    }

    #[test]
    fn gaussian_moments() {
        let t = fill_gaussian(&mut SeededRng::new(1), 100_000, 0.0, 1.0);
        let n = t.len() as f64;
        let mean = t.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let var = t
            .iter()
            .map(|&v| (f64::from(v) - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!(
            (libm::sqrt(var) - 1.0).abs() < 0.02,
            "std {}",
            libm::sqrt(var)
        );
    }

    #[test]
    fn spike_fraction() {
        let t = fill_spiky(&mut SeededRng::new(3), 100_000, 0.01, 50.0);
        let frac = t.iter().filter(|v| v.abs() > 10.0).count() as f64 / t.len() as f64;
        // P(|50 z| > 10) = P(|z| > 0.2) ≈ 0.8415, so the expected fraction is
        // ≈ 0.0084 plus a negligible Gaussian tail.
        assert!((0.005..=0.015).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn degenerate_spikes_match_gaussian() {
        let g = fill_gaussian(&mut SeededRng::new(9), 257, 0.0, 1.0);
        assert_eq!(fill_spiky(&mut SeededRng::new(9), 257, 1.0, 1.0), g);
        assert_eq!(fill_spiky(&mut SeededRng::new(9), 257, 0.0, 40.0), g);
    }

    #[test]
    fn determinism_and_independence() {
        let a = fill_spiky(&mut SeededRng::new(11), 1000, 0.05, 20.0);
        let b = fill_spiky(&mut SeededRng::new(11), 1000, 0.05, 20.0);
        assert_eq!(a.as_slice(), b.as_slice());
        let root = SeededRng::new(11);
        assert_ne!(root.derive(1).seed(), root.derive(2).seed());
        assert_eq!(root.derive(5), SeededRng::new(11).derive(5));
    }

    #[test]
    fn below_in_range() {
        let mut r = SeededRng::new(2);
        let mut hits = [0usize; 5];
        for _ in 0..5000 {
            hits[r.below(5)] += 1;
        }
        assert!(hits.iter().all(|&h| h > 800));
    }
}
