//! Order-independent, exactly rounded element-wise summation of `f32` vectors.
//!
//! Every reduction in the collectives goes through [`ExactSum`]. The sum is
//! held exactly and rounded to `f32` once, so the result does not depend on
//! the order or grouping in which contributions arrive. Ring, two-level and
//! direct reductions of the same inputs therefore agree to the bit.
//!
//! Each element starts in an `f64` fast path. An addition whose error term
//! (TwoSum) is non-zero promotes the element to a fixed-point accumulator
//! with its least significant bit at 2⁻¹⁴⁹, the smallest `f32` subnormal;
//! every finite `f32`, and every exact sum of them, is an integer multiple of
//! that.

use alloc::boxed::Box;
use alloc::vec::Vec;

const LIMBS: usize = 10;
const DIGIT_BITS: u32 = 32;
const DIGIT_MASK: i64 = (1 << DIGIT_BITS) - 1;
/// Exponent of the least significant accumulator bit.
const LSB_EXP: i32 = -149;
/// Lazy carries are flushed after this many additions.
const FLUSH_EVERY: u32 = 1 << 28;

#[derive(Debug, Clone, PartialEq, Eq)]
struct Wide {
    limbs: [i64; LIMBS],
    pending: u32,
}

impl Wide {
    fn zero() -> Self {
        Wide {
            limbs: [0; LIMBS],
            pending: 0,
        }
    }

    fn add_f64(&mut self, v: f64) {
        if v == 0.0 {
            return;
        }
        let bits = v.to_bits();
        let negative = bits >> 63 == 1;
        let raw_exp = ((bits >> 52) & 0x7FF) as i32;
        let frac = bits & ((1u64 << 52) - 1);
        let (mant, exp) = if raw_exp == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), raw_exp - 1075)
        };
        let shift = exp - LSB_EXP;
        debug_assert!(
            shift >= 0 || mant & ((1u64 << (-shift) as u32) - 1) == 0,
            "value below 2^-149 resolution"
        );
        let (mant, shift) = if shift < 0 {
            (mant >> (-shift) as u32, 0)
        } else {
            (mant, shift as u32)
        };
        let limb = (shift / DIGIT_BITS) as usize;
        let spread = u128::from(mant) << (shift % DIGIT_BITS);
        let sign = if negative { -1 } else { 1 };
        for k in 0..3 {
            let digit = ((spread >> (32 * k)) as i64) & DIGIT_MASK;
            if digit != 0 {
                self.limbs[limb + k] += sign * digit;
            }
        }
        self.pending += 1;
        if self.pending >= FLUSH_EVERY {
            self.normalize();
        }
    }

    fn add_wide(&mut self, other: &Wide) {
        let mut other = other.clone();
        other.normalize();
        self.normalize();
        for (a, b) in self.limbs.iter_mut().zip(other.limbs) {
            *a += b;
        }
        self.normalize();
    }

    /// Propagates carries so limbs `0..LIMBS-1` lie in `[0, 2^32)`; the top
    /// limb carries the sign.
    fn normalize(&mut self) {
        for i in 0..LIMBS - 1 {
            let carry = self.limbs[i] >> DIGIT_BITS;
            self.limbs[i] -= carry << DIGIT_BITS;
            self.limbs[i + 1] += carry;
        }
        self.pending = 0;
    }

    fn to_f32(&self) -> f32 {
        let mut w = self.clone();
        w.normalize();
        let negative = w.limbs[LIMBS - 1] < 0;
        if negative {
            for l in w.limbs.iter_mut() {
                *l = -*l;
            }
            w.normalize();
        }
        let magnitude = round_digits(&w.limbs);
        if negative {
            -magnitude
        } else {
            magnitude
        }
    }
}

/// Correctly rounded (nearest, ties to even) `f32` of a non-negative digit string.
fn round_digits(limbs: &[i64; LIMBS]) -> f32 {
    let Some(top) = limbs.iter().rposition(|&l| l != 0) else {
        return 0.0;
    };
    let msb = DIGIT_BITS * top as u32 + (63 - limbs[top].leading_zeros());
    // Gather up to 96 bits below and including the top limb.
    let mut window: u128 = 0;
    for k in 0..3 {
        window <<= 32;
        if top >= k {
            window |= limbs[top - k] as u128;
        }
    }
    let mut sticky = top >= 3 && limbs[..top - 2].iter().any(|&l| l != 0);
    // Bit `msb` sits at position `95 - (31 - msb % 32)` in the window.
    let window_msb = 64 + (msb % DIGIT_BITS);
    if msb < 24 {
        // fits in 24 bits at 2^-149: exact as a subnormal or small normal
        return libm::ldexp(limbs[0] as f64, LSB_EXP) as f32;
    }
    let drop = window_msb - 23;
    let mut mant = (window >> drop) as u64;
    let rem = window & ((1u128 << drop) - 1);
    let half = 1u128 << (drop - 1);
    sticky |= rem & (half - 1) != 0;
    let round_bit = rem & half != 0;
    if round_bit && (sticky || mant & 1 == 1) {
        mant += 1;
    }
    let exp = msb as i32 - 23 + LSB_EXP;
    libm::ldexp(mant as f64, exp) as f32
}

#[derive(Debug, Clone, PartialEq)]
enum Cell {
    Fast(f64),
    Wide(Box<Wide>),
}

impl Cell {
    #[inline]
    fn add(&mut self, x: f64) {
        match self {
            Cell::Fast(hi) => {
                let s = *hi + x;
                let bb = s - *hi;
                let err = (*hi - (s - bb)) + (x - bb);
                if err == 0.0 && s.is_finite() {
                    *hi = s;
                } else {
                    let mut w = Wide::zero();
                    w.add_f64(*hi);
                    w.add_f64(x);
                    *self = Cell::Wide(Box::new(w));
                }
            }
            Cell::Wide(w) => w.add_f64(x),
        }
    }

    fn merge(&mut self, other: &Cell) {
        match other {
            Cell::Fast(v) => self.add(*v),
            Cell::Wide(ow) => {
                if let Cell::Fast(hi) = self {
                    let mut w = Wide::zero();
                    w.add_f64(*hi);
                    *self = Cell::Wide(Box::new(w));
                }
                if let Cell::Wide(w) = self {
                    w.add_wide(ow);
                }
            }
        }
    }

    fn round(&self) -> f32 {
        match self {
            Cell::Fast(v) => *v as f32,
            Cell::Wide(w) => w.to_f32(),
        }
    }
}

/// Element-wise exact accumulator over vectors of one fixed length.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactSum {
    cells: Vec<Cell>,
}

impl ExactSum {
    pub fn new(len: usize) -> Self {
        Self {
            cells: alloc::vec![Cell::Fast(0.0); len],
        }
    }

    pub fn from_values(x: &[f32]) -> Self {
        Self {
            cells: x.iter().map(|&v| Cell::Fast(f64::from(v))).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Adds `x` element-wise. Panics on a length mismatch.
    pub fn add(&mut self, x: &[f32]) {
        assert_eq!(x.len(), self.cells.len(), "ExactSum length mismatch");
        for (c, &v) in self.cells.iter_mut().zip(x) {
            c.add(f64::from(v));
        }
    }

    /// Adds another accumulator without intermediate rounding.
    pub fn merge(&mut self, other: &ExactSum) {
        assert_eq!(
            other.cells.len(),
            self.cells.len(),
            "ExactSum length mismatch"
        );
        for (c, o) in self.cells.iter_mut().zip(&other.cells) {
            c.merge(o);
        }
    }

    /// Correctly rounded `f32` sums.
    pub fn round(&self) -> Vec<f32> {
        self.cells.iter().map(Cell::round).collect()
    }

    /// Correctly rounded sums, each then divided by `divisor` in `f32`.
    pub fn round_div(&self, divisor: usize) -> Vec<f32> {
        let d = divisor as f32;
        self.cells.iter().map(|c| c.round() / d).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sum_of(values: &[f32]) -> f32 {
        let mut acc = ExactSum::new(1);
        for &v in values {
            acc.add(&[v]);
        }
        acc.round()[0]
    }

    #[test]
    fn cancellation_is_exact() {
        assert_eq!(sum_of(&[1e30, 1.0, -1e30]), 1.0);
        assert_eq!(
            sum_of(&[f32::MAX, f32::MAX, -f32::MAX, -f32::MAX, 3.0]),
            3.0
        );
        assert_eq!(sum_of(&[1.0, 1e-40, -1.0]), 1e-40);
        assert_eq!(sum_of(&[-5.0, 1e-30, 5.0, -1e-30]), 0.0);
    }

    #[test]
    fn ties_round_to_even() {
        // 1 + 2^-24 is a tie between 1 and 1 + 2^-23; the sticky 2^-60 breaks it upward.
        let half_ulp = libm::ldexpf(1.0, -24);
        assert_eq!(sum_of(&[1.0, half_ulp]), 1.0);
        assert_eq!(
            sum_of(&[1.0, half_ulp, libm::ldexpf(1.0, -60)]),
            1.0 + 2.0 * half_ulp
        );
        assert_eq!(
            sum_of(&[1.0 + 2.0 * half_ulp, half_ulp]),
            1.0 + 4.0 * half_ulp
        );
        assert_eq!(
            sum_of(&[-1.0, -half_ulp, -libm::ldexpf(1.0, -60)]),
            -(1.0 + 2.0 * half_ulp)
        );
    }

    #[test]
    fn wide_path_matches_fast_path() {
        // Force promotion with a tiny term, then cancel it; the remaining
        // values must round as the f64 path would.
        let tiny = libm::ldexpf(1.0, -140);
        let vals = [0.1f32, 0.7, -0.3, 12.5];
        let f64_sum = vals.iter().map(|&v| f64::from(v)).sum::<f64>() as f32;
        let mut with_tiny = vec![tiny];
        with_tiny.extend_from_slice(&vals);
        with_tiny.push(-tiny);
        assert_eq!(sum_of(&with_tiny), f64_sum);
    }

    #[test]
    fn merge_equals_flat_sum() {
        let a = [1e20f32, 3.0, -7.25e-20];
        let b = [-1e20f32, 1e-38, 0.5];
        let mut left = ExactSum::new(3);
        left.add(&a);
        let mut right = ExactSum::new(3);
        right.add(&b);
        left.merge(&right);
        let mut flat = ExactSum::new(3);
        flat.add(&b);
        flat.add(&a);
        assert_eq!(left.round(), flat.round());
        assert_eq!(left.round(), vec![0.0, 3.0, 0.5]);
    }

    #[test]
    fn subnormals() {
        let s = f32::from_bits(1);
        assert_eq!(sum_of(&[s, s, s]), f32::from_bits(3));
        assert_eq!(sum_of(&[1e-38, -s]), 1e-38 - s);
    }

    #[test]
    fn overflow_becomes_infinite() {
        assert_eq!(sum_of(&[f32::MAX, f32::MAX]), f32::INFINITY);
    }
}
