//! Compressors used on the gradient and weight-difference channels, and
//! Monte Carlo estimators for their κ (unbiased variance) and δ (contraction)
//! constants.

use alloc::boxed::Box;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::hadamard::{fwht_in_place, HadamardConfig};
use crate::quant::{dequantize, quantize, quantize_with, Bits};
use crate::rng::{fill_gaussian, fill_spiky, stream, SeededRng};
use crate::tensor::{self, FlatTensor};

#[derive(Debug, Clone, PartialEq)]
pub enum Compressor {
    Identity,
    /// Group-wise nearest rounding, `dequantize(quantize(v))`.
    Nearest {
        bits: Bits,
        group_size: usize,
    },
    /// Group-wise stochastic rounding; unbiased per element.
    Stochastic {
        bits: Bits,
        group_size: usize,
        subseed: u64,
    },
    /// One scale `s = max |v|` for the whole vector, codes in {-1, 0, 1}.
    TernaryNearest,
    /// Blockwise Hadamard, nearest quantize/dequantize, inverse Hadamard.
    HadamardNearest {
        bits: Bits,
        group_size: usize,
        hadamard: HadamardConfig,
    },
    /// `inner(v) * factor`; with `factor = 1/(1+κ)` this turns a κ-approximate
    /// unbiased compressor into a biased contraction.
    Scaled {
        inner: Box<Compressor>,
        factor: f32,
    },
}

impl Compressor {
    pub fn nearest(k: u32, group_size: usize) -> Result<Self> {
        Self::check_group(group_size)?;
        Ok(Compressor::Nearest {
            bits: Bits::from_u32(k)?,
            group_size,
        })
    }

    pub fn stochastic(k: u32, group_size: usize, subseed: u64) -> Result<Self> {
        Self::check_group(group_size)?;
        Ok(Compressor::Stochastic {
            bits: Bits::from_u32(k)?,
            group_size,
            subseed,
        })
    }

    pub fn hadamard_nearest(k: u32, group_size: usize, block: usize) -> Result<Self> {
        Self::check_group(group_size)?;
        let hadamard = HadamardConfig::new(block)?;
        if !group_size.is_multiple_of(block) {
            return Err(Error::Config(
                "group size must be divisible by the hadamard block",
            ));
        }
        Ok(Compressor::HadamardNearest {
            bits: Bits::from_u32(k)?,
            group_size,
            hadamard,
        })
    }

    /// Converts an unbiased κ-approximate compressor into a
    /// `1/(1+κ)`-approximate one.
    pub fn shrunk(inner: Compressor, kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::Config("kappa must be finite and non-negative"));
        }
        Ok(Compressor::Scaled {
            inner: Box::new(inner),
            factor: (1.0 / (1.0 + kappa)) as f32,
        })
    }

    fn check_group(group_size: usize) -> Result<()> {
        if group_size == 0 {
            Err(Error::ZeroGroupSize)
        } else {
            Ok(())
        }
    }

    /// True when the output does not depend on the random stream.
    pub fn is_deterministic(&self) -> bool {
        match self {
            Compressor::Stochastic { .. } => false,
            Compressor::Scaled { inner, .. } => inner.is_deterministic(),
            _ => true,
        }
    }

    pub fn is_unbiased(&self) -> bool {
        matches!(self, Compressor::Identity | Compressor::Stochastic { .. })
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Compressor::Identity)
    }

    /// Compresses and reconstructs `v`. Deterministic kinds ignore `rng`;
    /// the stochastic kind consumes one draw from it to seed a per-call stream.
    pub fn compress(&self, v: &[f32], rng: &mut SeededRng) -> Result<FlatTensor> {
        if let Some(index) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if v.is_empty() {
            return Ok(FlatTensor::zeros(0));
        }
        match self {
            Compressor::Identity => Ok(FlatTensor::from_vec_unchecked(v.to_vec())),
            Compressor::Nearest { bits, group_size } => {
                dequantize(&quantize(v, *bits, *group_size)?)
            }
            Compressor::Stochastic {
                bits,
                group_size,
                subseed,
            } => {
                let mut draws =
                    SeededRng::new(rng.next_u64()).derive(stream::STOCHASTIC_ROUNDING ^ subseed);
                let chunk = quantize_with(v, *bits, *group_size, |t| {
                    let floor = libm::floor(t);
                    if draws.uniform() <= t - floor && t > floor {
                        floor + 1.0
                    } else {
                        floor
                    }
                })?;
                dequantize(&chunk)
            }
            Compressor::TernaryNearest => Ok(ternary_nearest(v)),
            Compressor::HadamardNearest {
                bits,
                group_size,
                hadamard,
            } => {
                let mut buf = v.to_vec();
                fwht_in_place(&mut buf, *hadamard)?;
                let mut out = dequantize(&quantize(&buf, *bits, *group_size)?)?.into_vec();
                fwht_in_place(&mut out, *hadamard)?;
                FlatTensor::new(out)
            }
            Compressor::Scaled { inner, factor } => {
                let out = inner.compress(v, rng)?.into_vec();
                FlatTensor::new(out.into_iter().map(|x| x * factor).collect())
            }
        }
    }
}

/// `round(v / max|v|) * max|v|` with ties away from zero.
fn ternary_nearest(v: &[f32]) -> FlatTensor {
    let s = v.iter().fold(0.0f32, |m, x| m.max(x.abs()));
    if s == 0.0 {
        return FlatTensor::zeros(v.len());
    }
    let out = v
        .iter()
        .map(|&x| {
            let code = libm::round(f64::from(x) / f64::from(s));
            (code * f64::from(s)) as f32
        })
        .collect();
    FlatTensor::from_vec_unchecked(out)
}

/// Where estimator inputs come from.
#[derive(Debug, Clone, PartialEq)]
pub enum InputDistribution {
    Gaussian {
        dim: usize,
    },
    Spiky {
        dim: usize,
        spike_prob: f64,
        spike_scale: f32,
    },
    /// Recorded vectors (gradients or weight differences), cycled in order.
    Replay(Vec<FlatTensor>),
}

impl InputDistribution {
    fn sample(&self, index: usize, rng: &mut SeededRng) -> FlatTensor {
        match self {
            InputDistribution::Gaussian { dim } => fill_gaussian(rng, *dim, 0.0, 1.0),
            InputDistribution::Spiky {
                dim,
                spike_prob,
                spike_scale,
            } => fill_spiky(rng, *dim, *spike_prob, *spike_scale),
            InputDistribution::Replay(vs) => vs[index % vs.len()].clone(),
        }
    }
}

/// Number of sampled inputs and stochastic resamples per input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EstimatorBudget {
    pub samples: usize,
    pub resamples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressorStats {
    /// Worst sampled `E‖C(v) - v‖² / ‖v‖²`.
    pub kappa_hat: f64,
    /// `1 - kappa_hat`, clamped to [0, 1].
    pub delta_hat: f64,
    /// Compressor invocations used (non-zero samples × resamples).
    pub trials: usize,
    /// Worst sampled `‖mean C(v) - v‖ / ‖v‖`.
    pub bias_norm: f64,
    /// Standardized squared bias pooled over every sampled input,
    /// `(Σ d_i² - Σ se_i²) / √(2 Σ se_i⁴)` with `d_i = mean_i - v_i` and
    /// `se_i²` the squared standard error. Roughly N(0, 1) for an unbiased
    /// compressor. Unweighted so that elements rounding up only rarely do not
    /// dominate.
    pub bias_z: f64,
    /// Worst sampled single-draw `‖C(v) - v‖ / ‖v‖`.
    pub max_ratio: f64,
}

fn run_estimator(
    c: &Compressor,
    dist: &InputDistribution,
    budget: EstimatorBudget,
    rng: &SeededRng,
) -> Result<CompressorStats> {
    if budget.samples == 0 || budget.resamples == 0 {
        return Err(Error::Config(
            "estimator needs at least one sample and one resample",
        ));
    }
    if matches!(dist, InputDistribution::Replay(v) if v.is_empty()) {
        return Err(Error::Config("replay distribution is empty"));
    }
    let resamples = if c.is_deterministic() {
        1
    } else {
        budget.resamples
    };
    let mut stats = CompressorStats {
        kappa_hat: 0.0,
        delta_hat: 1.0,
        trials: 0,
        bias_norm: 0.0,
        bias_z: 0.0,
        max_ratio: 0.0,
    };
    let (mut excess, mut spread) = (0.0, 0.0);
    let trials_root = rng.derive(stream::TRIALS);
    for index in 0..budget.samples {
        let mut sample_rng = trials_root.derive(index as u64);
        let v = dist.sample(index, &mut sample_rng);
        let v_norm_sq = v.norm() * v.norm();
        if v_norm_sq == 0.0 {
            continue;
        }
        let mut compress_rng = sample_rng.derive(stream::GRAD_COMPRESS);
        let mut sum = alloc::vec![0.0f64; v.len()];
        let mut sum_sq = alloc::vec![0.0f64; v.len()];
        let mut err_sq = 0.0;
        for _ in 0..resamples {
            let out = c.compress(&v, &mut compress_rng)?;
            let e = tensor::distance(&out, &v);
            err_sq += e * e;
            stats.max_ratio = stats.max_ratio.max(e / libm::sqrt(v_norm_sq));
            for (i, &o) in out.iter().enumerate() {
                sum[i] += f64::from(o);
                sum_sq[i] += f64::from(o) * f64::from(o);
            }
        }
        stats.trials += resamples;
        let r = resamples as f64;
        stats.kappa_hat = stats.kappa_hat.max(err_sq / r / v_norm_sq);
        let mut bias_sq = 0.0;
        for i in 0..v.len() {
            let mean = sum[i] / r;
            let d = mean - f64::from(v[i]);
            bias_sq += d * d;
            if resamples > 1 {
                let var = (sum_sq[i] / r - mean * mean) * r / (r - 1.0);
                excess -= var / r;
                spread += 2.0 * (var / r) * (var / r);
            }
        }
        stats.bias_norm = stats.bias_norm.max(libm::sqrt(bias_sq / v_norm_sq));
        if resamples > 1 {
            excess += bias_sq;
        }
    }
    if spread > 0.0 {
        stats.bias_z = excess / libm::sqrt(spread);
    }
    stats.delta_hat = (1.0 - stats.kappa_hat).clamp(0.0, 1.0);
    Ok(stats)
}

/// Monte Carlo estimate of κ for an unbiased compressor.
///
/// The result is a lower bound on the true constant: only the worst sampled
/// input is seen.
pub fn estimate_kappa(
    c: &Compressor,
    dist: &InputDistribution,
    budget: EstimatorBudget,
    rng: &SeededRng,
) -> Result<CompressorStats> {
    if !c.is_unbiased() {
        return Err(Error::Config(
            "kappa is only defined for unbiased compressors",
        ));
    }
    run_estimator(c, dist, budget, rng)
}

/// Monte Carlo estimate of δ for any compressor.
pub fn estimate_delta(
    c: &Compressor,
    dist: &InputDistribution,
    budget: EstimatorBudget,
    rng: &SeededRng,
) -> Result<CompressorStats> {
    run_estimator(c, dist, budget, rng)
}
