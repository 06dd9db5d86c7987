//! Blocked, orthonormal fast Walsh–Hadamard transform.
//!
//! Each consecutive block of `b` elements is replaced by `H_b · block / √b`,
//! where `H_b` is the Sylvester-construction Hadamard matrix. With that
//! normalization the transform is symmetric and orthogonal, so applying it
//! twice is the identity (up to rounding).

use core::ops::{Add, MulAssign, Sub};

use crate::error::{Error, Result};
use crate::tensor::FlatTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HadamardConfig {
    block: usize,
}

impl Default for HadamardConfig {
    fn default() -> Self {
        Self { block: 32 }
    }
}

impl HadamardConfig {
    pub fn new(block: usize) -> Result<Self> {
        if block < 2 || !block.is_power_of_two() {
            return Err(Error::Config("hadamard block must be a power of two >= 2"));
        }
        Ok(Self { block })
    }

    pub fn block(&self) -> usize {
        self.block
    }
}

fn butterfly<T>(data: &mut [T], b: usize, norm: T) -> Result<()>
where
    T: Copy + Add<Output = T> + Sub<Output = T> + MulAssign,
{
    if !data.len().is_multiple_of(b) {
        return Err(Error::Misaligned {
            len: data.len(),
            multiple: b,
        });
    }
    for block in data.chunks_exact_mut(b) {
        let mut h = 1;
        while h < b {
            for base in (0..b).step_by(2 * h) {
                for j in base..base + h {
                    let (x, y) = (block[j], block[j + h]);
                    block[j] = x + y;
                    block[j + h] = x - y;
                }
            }
            h *= 2;
        }
        for v in block.iter_mut() {
            *v *= norm;
        }
    }
    Ok(())
}

/// In-place transform of every block of `data`.
///
/// Stages run with doubling half-width `h = 1, 2, 4, …`; inside a stage pairs
/// `(j, j + h)` are visited in ascending `j`. The scale `1/√b` is applied
/// last. That order is fixed so results are bit-reproducible.
pub fn fwht_in_place(data: &mut [f32], cfg: HadamardConfig) -> Result<()> {
    butterfly(data, cfg.block, (1.0 / libm::sqrt(cfg.block as f64)) as f32)
}

/// Same butterfly in `f64`, for reference paths that must not add `f32`
/// rounding between paired transforms.
pub fn fwht_f64_in_place(data: &mut [f64], cfg: HadamardConfig) -> Result<()> {
    butterfly(data, cfg.block, 1.0 / libm::sqrt(cfg.block as f64))
}

/// Blockwise transform returning a new tensor.
pub fn fwht_blockwise(x: &FlatTensor, cfg: HadamardConfig) -> Result<FlatTensor> {
    let mut data = x.as_slice().to_vec();
    fwht_in_place(&mut data, cfg)?;
    FlatTensor::new(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{fill_gaussian, fill_spiky, SeededRng};
    use alloc::vec;
    use alloc::vec::Vec;

    /// Dense Sylvester matrix entry: `(-1)^popcount(i & j)`.
    fn dense_reference(x: &[f32], b: usize) -> Vec<f64> {
        let norm = 1.0 / libm::sqrt(b as f64);
        x.chunks(b)
            .flat_map(|block| {
                (0..b).map(move |i| {
                    norm * (0..b)
                        .map(|j| {
                            let sign = if (i & j).count_ones() % 2 == 0 {
                                1.0
                            } else {
                                -1.0
                            };
                            sign * f64::from(block[j])
                        })
                        .sum::<f64>()
                })
            })
            .collect()
    }

    #[test]
    fn h2_definition() {
        let cfg = HadamardConfig::new(2).unwrap();
        let y = fwht_blockwise(&FlatTensor::new(vec![1.0, 0.0]).unwrap(), cfg).unwrap();
        assert!((y[0] - core::f32::consts::FRAC_1_SQRT_2).abs() < 1e-7);
        assert!((y[1] - core::f32::consts::FRAC_1_SQRT_2).abs() < 1e-7);
        let y = fwht_blockwise(&FlatTensor::new(vec![3.0, 3.0]).unwrap(), cfg).unwrap();
        assert!((y[0] - 3.0 * core::f32::consts::SQRT_2).abs() < 1e-6);
        assert_eq!(y[1], 0.0);
    }

    #[test]
    fn matches_dense_matrix() {
        for b in [2, 4, 8, 32, 64] {
            let cfg = HadamardConfig::new(b).unwrap();
            let x = fill_gaussian(&mut SeededRng::new(b as u64), 4 * b, 0.0, 1.0);
            let fast = fwht_blockwise(&x, cfg).unwrap();
            for (f, d) in fast.iter().zip(dense_reference(&x, b)) {
                assert!((f64::from(*f) - d).abs() < 1e-5, "b={b}");
            }
        }
    }

    #[test]
    fn involution_b32() {
        let cfg = HadamardConfig::default();
        let x = fill_gaussian(&mut SeededRng::new(4), 32 * 8, 0.0, 1.0);
        let back = fwht_blockwise(&fwht_blockwise(&x, cfg).unwrap(), cfg).unwrap();
        for (a, b) in x.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn smooths_spikes() {
        let cfg = HadamardConfig::default();
        let ratio = |t: &[f32]| {
            let rms =
                libm::sqrt(t.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>() / t.len() as f64);
            f64::from(t.iter().fold(0.0f32, |m, v| m.max(v.abs()))) / rms
        };
        let mut wins = 0;
        for seed in 0..200 {
            let x = fill_spiky(&mut SeededRng::new(seed), 4096, 0.01, 50.0);
            let y = fwht_blockwise(&x, cfg).unwrap();
            if ratio(&y) < ratio(&x) {
                wins += 1;
            }
        }
        assert!(wins >= 190, "{wins}/200");
    }

    #[test]
    fn rejects_bad_config_and_length() {
        assert!(HadamardConfig::new(0).is_err());
        assert!(HadamardConfig::new(1).is_err());
        assert!(HadamardConfig::new(24).is_err());
        let cfg = HadamardConfig::new(8).unwrap();
        assert_eq!(
            fwht_blockwise(&FlatTensor::zeros(12), cfg),
            Err(Error::Misaligned {
                len: 12,
                multiple: 8
            })
        );
        assert!(fwht_blockwise(&FlatTensor::zeros(0), cfg)
            .unwrap()
            .is_empty());
    }
}
