//! Exact integer dot products against a P-bit two's-complement accumulator.
//!
//! Extremes of `x^T q` over every N-bit input vector are attained by the
//! extremal inputs (the largest representable value where `q_i >= 0` and the
//! smallest elsewhere, and the reverse for the minimum). The exhaustive oracle
//! enumerates all inputs to confirm that shortcut. All sums are exact; the
//! P-bit register is only modeled by a final modular reduction.

use num::bigint::BigInt;
use num::traits::{One, ToPrimitive, Zero};
use serde::{Serialize, Serializer};

use crate::bounds::int_range;
use crate::error::{check_same_len, Error, Result};

/// Default cap on the number of input vectors the exhaustive oracle visits.
pub const DEFAULT_ENUM_BUDGET: u128 = 1 << 24;

/// Environment variable overriding [`DEFAULT_ENUM_BUDGET`].
pub const ENUM_BUDGET_ENV: &str = "ACCQ_ENUM_BUDGET";

/// The budget from `ACCQ_ENUM_BUDGET`, or the default when unset or unparsable.
pub fn enum_budget_from_env() -> u128 {
    std::env::var(ENUM_BUDGET_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_ENUM_BUDGET)
}

/// A signed P-bit accumulator with range `[-2^(P-1), 2^(P-1) - 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AccumulatorSpec {
    pub acc_bits: u32,
}

impl AccumulatorSpec {
    pub fn new(acc_bits: u32) -> Result<Self> {
        if !(2..=64).contains(&acc_bits) {
            return Err(Error::InvalidBitWidth(format!(
                "accumulator bits must lie in [2, 64], got {acc_bits}"
            )));
        }
        Ok(AccumulatorSpec { acc_bits })
    }

    /// `a`, the most negative representable value.
    pub fn min(&self) -> i128 {
        -(1i128 << (self.acc_bits - 1))
    }

    /// `b`, the most positive representable value.
    pub fn max(&self) -> i128 {
        (1i128 << (self.acc_bits - 1)) - 1
    }

    pub fn contains(&self, value: &BigInt) -> bool {
        *value >= BigInt::from(self.min()) && *value <= BigInt::from(self.max())
    }

    /// Reduces an exact value modulo `2^P` into `[a, b]`.
    pub fn wrap(&self, value: &BigInt) -> i128 {
        let modulus = BigInt::one() << self.acc_bits as usize;
        let mut r = value % &modulus;
        if r < BigInt::zero() {
            r += &modulus;
        }
        if r > BigInt::from(self.max()) {
            r -= &modulus;
        }
        r.to_i128().expect("wrapped value fits in i128")
    }
}

fn ser_big<S: Serializer>(v: &BigInt, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v.to_i64() {
        Some(x) => s.serialize_i64(x),
        None => s.serialize_str(&v.to_string()),
    }
}

/// Outcome of an exact overflow check of one channel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccumWitness {
    /// `f`, the largest attainable dot product.
    #[serde(serialize_with = "ser_big")]
    pub true_max: BigInt,
    /// `e`, the smallest attainable dot product.
    #[serde(serialize_with = "ser_big")]
    pub true_min: BigInt,
    pub overflowed: bool,
    pub wrapped_max: i128,
    pub wrapped_min: i128,
    pub witness_x_max: Vec<i64>,
    pub witness_x_min: Vec<i64>,
    /// `f <= 2^(P-1) - 1`.
    pub max_fits: bool,
    /// `-e <= 2^(P-1)`.
    pub min_fits: bool,
    /// `f - e <= 2^P - 1`.
    pub spread_fits: bool,
}

impl AccumWitness {
    fn from_extremes(
        true_max: BigInt,
        true_min: BigInt,
        witness_x_max: Vec<i64>,
        witness_x_min: Vec<i64>,
        spec: &AccumulatorSpec,
    ) -> Self {
        let b = BigInt::from(spec.max());
        let a = BigInt::from(spec.min());
        let max_fits = true_max <= b;
        let min_fits = -&true_min <= -&a;
        let spread_fits = &true_max - &true_min <= &b - &a;
        AccumWitness {
            overflowed: true_max > b || true_min < a,
            wrapped_max: spec.wrap(&true_max),
            wrapped_min: spec.wrap(&true_min),
            true_max,
            true_min,
            witness_x_max,
            witness_x_min,
            max_fits,
            min_fits,
            spread_fits,
        }
    }
}

/// The `[c, d]` range of N-bit activations.
pub fn act_range(act_bits: u32, signed: bool) -> Result<(i64, i64)> {
    if !(1..=64).contains(&act_bits) || (!signed && act_bits == 64) {
        return Err(Error::InvalidBitWidth(format!(
            "activation bits must lie in [1, 64] (63 when unsigned), got {act_bits}"
        )));
    }
    Ok(int_range(act_bits, signed))
}

/// Exact `x^T q`.
pub fn exact_dot(x: &[i64], q: &[i64]) -> BigInt {
    x.iter()
        .zip(q)
        .map(|(&a, &b)| BigInt::from(i128::from(a) * i128::from(b)))
        .sum()
}

/// The input maximizing `x^T q`: `d` where `q_i >= 0`, `c` elsewhere.
pub fn extremal_max_input(q: &[i64], act_bits: u32, signed: bool) -> Result<Vec<i64>> {
    let (c, d) = act_range(act_bits, signed)?;
    Ok(q.iter().map(|&qi| if qi >= 0 { d } else { c }).collect())
}

/// The input minimizing `x^T q`: `c` where `q_i >= 0`, `d` elsewhere.
pub fn extremal_min_input(q: &[i64], act_bits: u32, signed: bool) -> Result<Vec<i64>> {
    let (c, d) = act_range(act_bits, signed)?;
    Ok(q.iter().map(|&qi| if qi >= 0 { c } else { d }).collect())
}

/// Overflow check through the extremal inputs.
pub fn check_accumulator(
    q: &[i64],
    act_bits: u32,
    signed: bool,
    spec: &AccumulatorSpec,
) -> Result<AccumWitness> {
    let mu = extremal_max_input(q, act_bits, signed)?;
    let nu = extremal_min_input(q, act_bits, signed)?;
    let f = exact_dot(&mu, q);
    let e = exact_dot(&nu, q);
    Ok(AccumWitness::from_extremes(f, e, mu, nu, spec))
}

/// `x^T q` reduced into the P-bit register, and whether the reduction changed it.
pub fn wrapping_dot(x: &[i64], q: &[i64], spec: &AccumulatorSpec) -> Result<(i128, bool)> {
    check_same_len(x.len(), q.len())?;
    let exact = exact_dot(x, q);
    let wrapped = spec.wrap(&exact);
    Ok((wrapped, BigInt::from(wrapped) != exact))
}

/// Number of N-bit input vectors of length `k`, or `None` past `u128`.
pub fn enumeration_size(k: usize, act_bits: u32) -> Option<u128> {
    let per = 1u128.checked_shl(act_bits)?;
    (0..k).try_fold(1u128, |acc, _| acc.checked_mul(per))
}

/// Overflow check by visiting every N-bit input vector.
///
/// Refuses (rather than sampling) when the input space exceeds `budget`.
pub fn exhaustive_check(
    q: &[i64],
    act_bits: u32,
    signed: bool,
    spec: &AccumulatorSpec,
    budget: u128,
) -> Result<AccumWitness> {
    let (c, d) = act_range(act_bits, signed)?;
    let required = enumeration_size(q.len(), act_bits).unwrap_or(u128::MAX);
    if required > budget {
        return Err(Error::BudgetExceeded { required, budget });
    }
    let (max, min, x_max, x_min) = enumerate_extremes(q, c, d);
    Ok(AccumWitness::from_extremes(
        BigInt::from(max),
        BigInt::from(min),
        x_max,
        x_min,
        spec,
    ))
}

/// Walks every `x` in `[c, d]^K` in odometer order, updating the dot product
/// incrementally. Inputs small enough to enumerate keep every partial sum
/// well inside `i128`.
fn enumerate_extremes(q: &[i64], c: i64, d: i64) -> (i128, i128, Vec<i64>, Vec<i64>) {
    let k = q.len();
    let qw: Vec<i128> = q.iter().map(|&v| i128::from(v)).collect();
    let span = i128::from(d) - i128::from(c);
    let mut x = vec![c; k];
    let mut sum: i128 = qw.iter().map(|&v| v * i128::from(c)).sum();
    let (mut max, mut min) = (sum, sum);
    let (mut x_max, mut x_min) = (x.clone(), x.clone());
    loop {
        let mut pos = 0;
        loop {
            if pos == k {
                return (max, min, x_max, x_min);
            }
            if x[pos] < d {
                x[pos] += 1;
                sum += qw[pos];
                break;
            }
            x[pos] = c;
            sum -= span * qw[pos];
            pos += 1;
        }
        if sum > max {
            max = sum;
            x_max.copy_from_slice(&x);
        }
        if sum < min {
            min = sum;
            x_min.copy_from_slice(&x);
        }
    }
}

/// Whether `q` at scale `s` satisfies the hypotheses that transfer an l1
/// budget from `w / s` to `q`: every nonzero `q_i` shares the sign of `w_i`,
/// and `|s q_i| <= |w_i|`.
pub fn verify_prop2(w: &[f64], s: f64, q: &[i64]) -> Result<bool> {
    check_same_len(w.len(), q.len())?;
    if !(s > 0.0) {
        return Err(Error::InvalidConfig(format!("scale must be positive, got {s}")));
    }
    Ok(w.iter().zip(q).all(|(&wi, &qi)| {
        let sq = s * qi as f64;
        let sign_ok = qi == 0 || (qi > 0) == (wi > 0.0) && wi != 0.0;
        sign_ok && sq.abs() <= wi.abs()
    }))
}
