//! Closed-form accumulator bounds.
//!
//! All l1 budgets are kept as exact rationals so that the comparison between
//! a weight vector's norm and its budget never goes through a rounded float.
//! The conservative accumulator width is the one exception: it mixes a log2
//! and a ceiling and is evaluated in double precision with a conservative
//! tie rule.

use std::cmp::Ordering;
use std::fmt;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported bit width for any of M, N, P.
pub const MAX_BITS: u32 = 64;

/// Distance to an integer below which `min_acc_width` rounds up instead of
/// trusting the double-precision ceiling.
pub const CEIL_TIE_EPS: f64 = 1e-9;

/// Weight, activation and accumulator bit widths of one quantized layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitWidths {
    /// M, the weight bit width.
    pub weight_bits: u32,
    /// N, the input activation bit width.
    pub act_bits: u32,
    /// P, the accumulator bit width.
    pub acc_bits: u32,
    /// Whether input activations are signed two's complement.
    pub act_signed: bool,
}

impl BitWidths {
    pub fn new(weight_bits: u32, act_bits: u32, acc_bits: u32, act_signed: bool) -> Result<Self> {
        let bits = BitWidths {
            weight_bits,
            act_bits,
            acc_bits,
            act_signed,
        };
        bits.validate()?;
        Ok(bits)
    }

    pub fn validate(&self) -> Result<()> {
        check_range("weight", self.weight_bits, 2)?;
        check_range("activation", self.act_bits, 1)?;
        check_range("accumulator", self.acc_bits, 2)?;
        Ok(())
    }

    /// 1 when activations are signed, else 0.
    pub fn signed_indicator(&self) -> u32 {
        u32::from(self.act_signed)
    }

    /// Clip limits `(n, p)` of the signed M-bit weight codes.
    pub fn weight_code_range(&self) -> (i64, i64) {
        int_range(self.weight_bits, true)
    }

    /// Representable range `[c, d]` of the N-bit input activations.
    pub fn act_range(&self) -> (i64, i64) {
        int_range(self.act_bits, self.act_signed)
    }
}

fn check_range(what: &str, bits: u32, min: u32) -> Result<()> {
    if bits < min || bits > MAX_BITS {
        return Err(Error::InvalidBitWidth(format!(
            "{what} bits must lie in [{min}, {MAX_BITS}], got {bits}"
        )));
    }
    Ok(())
}

/// Two's-complement range for `bits` signed bits, or `[0, 2^bits - 1]` when
/// unsigned. Unsigned 64-bit saturates at `i64::MAX`.
pub fn int_range(bits: u32, signed: bool) -> (i64, i64) {
    debug_assert!((1..=64).contains(&bits));
    if signed {
        let half = 1i128 << (bits - 1);
        ((-half) as i64, (half - 1) as i64)
    } else {
        let hi = (1i128 << bits) - 1;
        (0, hi.min(i64::MAX as i128) as i64)
    }
}

fn pow2(e: u32) -> BigInt {
    BigInt::one() << e as usize
}

/// An exact non-negative rational budget, stored in lowest terms.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RationalBound(BigRational);

impl RationalBound {
    pub fn new(numer: BigInt, denom: BigInt) -> Result<Self> {
        if !denom.is_positive() {
            return Err(Error::Infeasible(format!("denominator must be positive, got {denom}")));
        }
        Ok(RationalBound(BigRational::new(numer, denom)))
    }

    pub fn from_integer(n: i64) -> Self {
        RationalBound(BigRational::from_integer(BigInt::from(n)))
    }

    /// The exact value of a finite float.
    pub fn from_f64(x: f64) -> Result<Self> {
        BigRational::from_float(x)
            .map(RationalBound)
            .ok_or(Error::NonFinite(0))
    }

    pub fn numer(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.0.denom()
    }

    pub fn as_ratio(&self) -> &BigRational {
        &self.0
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// Largest double that does not exceed the exact value.
    pub fn floor_f64(&self) -> f64 {
        let mut x = self.to_f64();
        while let Some(exact) = BigRational::from_float(x) {
            if exact <= self.0 {
                break;
            }
            x = x.next_down();
        }
        x
    }

    pub fn floor(&self) -> BigInt {
        self.0.floor().to_integer()
    }

    /// Exact comparison against a float, without rounding the bound.
    pub fn cmp_f64(&self, x: f64) -> Option<Ordering> {
        BigRational::from_float(x).map(|r| self.0.cmp(&r))
    }

    /// Whether an integer l1 norm fits within the budget.
    pub fn admits_int(&self, l1: &BigInt) -> bool {
        BigRational::from_integer(l1.clone()) <= self.0
    }

    /// Whether a real l1 norm (taken exactly as a double) fits within the budget.
    pub fn admits_f64(&self, l1: f64) -> bool {
        matches!(self.cmp_f64(l1), Some(Ordering::Greater | Ordering::Equal))
    }

    /// `self - l1`, exactly.
    pub fn slack_int(&self, l1: &BigInt) -> RationalBound {
        RationalBound(&self.0 - BigRational::from_integer(l1.clone()))
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    /// Parses `a/b` or a plain integer.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("not a rational: {s:?}"));
        let (n, d) = match s.trim().split_once('/') {
            Some((n, d)) => (n.trim(), d.trim()),
            None => (s.trim(), "1"),
        };
        let n: BigInt = n.parse().map_err(|_| bad())?;
        let d: BigInt = d.parse().map_err(|_| bad())?;
        RationalBound::new(n, d).map_err(|_| bad())
    }
}

impl std::ops::Mul for &RationalBound {
    type Output = RationalBound;
    fn mul(self, rhs: &RationalBound) -> RationalBound {
        RationalBound(&self.0 * &rhs.0)
    }
}

impl std::ops::Div for &RationalBound {
    type Output = RationalBound;
    fn div(self, rhs: &RationalBound) -> RationalBound {
        RationalBound(&self.0 / &rhs.0)
    }
}

impl std::ops::Sub for &RationalBound {
    type Output = RationalBound;
    fn sub(self, rhs: &RationalBound) -> RationalBound {
        RationalBound(&self.0 - &rhs.0)
    }
}

impl fmt::Display for RationalBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.numer())
        } else {
            write!(f, "{}/{}", self.numer(), self.denom())
        }
    }
}

/// Serialized as the string `a/b`, or `a` for integers.
impl Serialize for RationalBound {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RationalBound {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        RationalBound::parse(&s).map_err(serde::de::Error::custom)
    }
}

fn check_acc_act(bits: &BitWidths) -> Result<()> {
    check_range("activation", bits.act_bits, 1)?;
    check_range("accumulator", bits.acc_bits, 2)
}

/// l1 budget of the integer weights under the sign-dependent Hölder bound:
/// `(2^(P-1) - 1) / 2^(N - signed)`.
pub fn a2q_limit(bits: &BitWidths) -> Result<RationalBound> {
    check_acc_act(bits)?;
    let numer = pow2(bits.acc_bits - 1) - 1;
    let denom = pow2(bits.act_bits - bits.signed_indicator());
    RationalBound::new(numer, denom)
}

/// l1 budget of zero-centered integer weights: `(2^P - 2) / (2^N - 1)`.
/// Does not depend on activation signedness.
pub fn a2q_plus_limit(bits: &BitWidths) -> Result<RationalBound> {
    check_acc_act(bits)?;
    let numer = pow2(bits.acc_bits) - 2;
    let denom = pow2(bits.act_bits) - 1;
    RationalBound::new(numer, denom)
}

/// Gain of the zero-centered budget over the Hölder budget:
/// `2^(N + 1 - signed) / (2^N - 1)`.
pub fn bound_ratio(act_bits: u32, act_signed: bool) -> Result<RationalBound> {
    check_range("activation", act_bits, 1)?;
    let numer = pow2(act_bits + 1 - u32::from(act_signed));
    let denom = pow2(act_bits) - 1;
    RationalBound::new(numer, denom)
}

/// Most conservative accumulator width P* for dot products of size up to
/// `k_star` with unconstrained M-bit weights and N-bit inputs.
pub fn min_acc_width(k_star: i64, bits: &BitWidths) -> Result<u32> {
    if k_star < 1 {
        return Err(Error::NonPositiveK(k_star));
    }
    check_range("weight", bits.weight_bits, 2)?;
    check_range("activation", bits.act_bits, 1)?;
    let alpha = (k_star as f64).log2() + f64::from(bits.weight_bits) + f64::from(bits.act_bits)
        - 1.0
        - f64::from(bits.signed_indicator());
    let phi = (-alpha).exp2().ln_1p() / std::f64::consts::LN_2;
    let x = alpha + phi + 1.0;
    let nearest = x.round();
    let p = if (x - nearest).abs() < CEIL_TIE_EPS {
        nearest + 1.0
    } else {
        x.ceil()
    };
    Ok(p as u32)
}
