//! Flat `f32` payloads.

use alloc::vec::Vec;
use core::ops::Deref;

use crate::error::{Error, Result};

/// A flat array of finite 32-bit reals.
///
/// Every constructor rejects NaN and infinities, so downstream code can assume
/// finiteness without re-checking.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlatTensor {
    data: Vec<f32>,
}

impl FlatTensor {
    pub fn new(data: Vec<f32>) -> Result<Self> {
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { data })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            data: alloc::vec![0.0; len],
        }
    }

    pub fn from_slice(data: &[f32]) -> Result<Self> {
        Self::new(data.to_vec())
    }

    /// Caller guarantees every element is finite.
    pub(crate) fn from_vec_unchecked(data: Vec<f32>) -> Self {
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Euclidean norm accumulated in `f64`.
    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }

    /// Euclidean distance to `other`, accumulated in `f64`.
    pub fn distance(&self, other: &FlatTensor) -> f64 {
        distance(&self.data, &other.data)
    }

    /// Largest absolute element, 0 for an empty tensor.
    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

impl Deref for FlatTensor {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        &self.data
    }
}

impl TryFrom<Vec<f32>> for FlatTensor {
    type Error = Error;

    fn try_from(data: Vec<f32>) -> Result<Self> {
        Self::new(data)
    }
}

pub(crate) fn norm(v: &[f32]) -> f64 {
    libm::sqrt(v.iter().map(|&x| f64::from(x) * f64::from(x)).sum())
}

pub(crate) fn distance(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    libm::sqrt(
        a.iter()
            .zip(b)
            .map(|(&x, &y)| {
                let d = f64::from(x) - f64::from(y);
                d * d
            })
            .sum(),
    )
}
