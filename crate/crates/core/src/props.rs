//! Numerical witnesses for the overflow-avoidance arguments.
//!
//! Each function checks one step of the argument on concrete vectors: the
//! alpha/beta identities of zero-sum vectors, the three extremal derivations,
//! the rounding lemma, and exhaustive searches showing the zero-centered
//! budget is tight and that zero-centering is required for it.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bounds::{a2q_limit, a2q_plus_limit, BitWidths};
use crate::error::{check_same_len, Error, Result};
use crate::intsim::{
    act_range, check_accumulator, exact_dot, exhaustive_check, extremal_max_input,
    extremal_min_input, AccumWitness, AccumulatorSpec, DEFAULT_ENUM_BUDGET,
};

/// An integer vector whose elements sum to zero, with `alpha` the sum of its
/// positive elements and `beta` the sum of its negative elements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZeroSumVector {
    pub q: Vec<i64>,
    pub alpha: BigInt,
    pub beta: BigInt,
}

impl ZeroSumVector {
    pub fn new(q: Vec<i64>) -> Result<Self> {
        let alpha: BigInt = q.iter().filter(|&&x| x > 0).map(|&x| BigInt::from(x)).sum();
        let beta: BigInt = q.iter().filter(|&&x| x < 0).map(|&x| BigInt::from(x)).sum();
        if &alpha + &beta != BigInt::zero() {
            return Err(Error::Infeasible(format!("{q:?} does not sum to zero")));
        }
        Ok(ZeroSumVector { q, alpha, beta })
    }

    pub fn l1(&self) -> BigInt {
        &self.alpha - &self.beta
    }
}

/// Random zero-sum vector of length `k` with `||q||_1 <= l1_budget`.
pub fn gen_zero_sum(k: usize, l1_budget: u64, seed: u64) -> Result<ZeroSumVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gen_zero_sum_with(&mut rng, k, l1_budget)
}

pub fn gen_zero_sum_with<R: Rng>(rng: &mut R, k: usize, l1_budget: u64) -> Result<ZeroSumVector> {
    if k == 0 {
        return Err(Error::Infeasible("zero-sum vector needs K >= 1".into()));
    }
    if k == 1 {
        if l1_budget > 0 {
            return Err(Error::Infeasible("K = 1 forces q = [0]".into()));
        }
        return ZeroSumVector::new(vec![0]);
    }
    let half = rng.random_range(0..=l1_budget / 2) as i64;
    let mut q = vec![0i64; k];
    if half > 0 {
        // split indices into a nonempty positive and a nonempty negative side
        let mut positive: Vec<bool> = (0..k).map(|_| rng.random_bool(0.5)).collect();
        if positive.iter().all(|&p| p) || positive.iter().all(|&p| !p) {
            let flip = rng.random_range(0..k);
            positive[flip] = !positive[flip];
        }
        let pos: Vec<usize> = (0..k).filter(|&i| positive[i]).collect();
        let neg: Vec<usize> = (0..k).filter(|&i| !positive[i]).collect();
        for _ in 0..half {
            q[pos[rng.random_range(0..pos.len())]] += 1;
            q[neg[rng.random_range(0..neg.len())]] -= 1;
        }
    }
    ZeroSumVector::new(q)
}

/// The three extremal derivations for one zero-sum vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop1Report {
    /// `mu^T q = alpha (d - c)`.
    pub max_identity: bool,
    /// `-nu^T q = alpha (d - c)`.
    pub min_identity: bool,
    /// `mu_i - nu_i = (d - c) sign(q_i)` wherever `q_i != 0`.
    pub spread_elementwise: bool,
    /// `(mu - nu)^T q = (d - c) ||q||_1`.
    pub spread_identity: bool,
    /// `mu^T q <= 2^(P-1) - 1` iff `||q||_1 <= (2^P - 2) / (2^N - 1)`.
    pub max_bound_equivalent: bool,
    /// `-nu^T q <= 2^(P-1)` iff `||q||_1 <= 2^P / (2^N - 1)`.
    pub min_bound_equivalent: bool,
    /// `f - e <= 2^P - 1` iff `||q||_1 <= (2^P - 1) / (2^N - 1)`.
    pub spread_bound_equivalent: bool,
    /// The first budget implies the other two.
    pub implication_holds: bool,
}

impl Prop1Report {
    pub fn all_hold(&self) -> bool {
        self.max_identity
            && self.min_identity
            && self.spread_elementwise
            && self.spread_identity
            && self.max_bound_equivalent
            && self.min_bound_equivalent
            && self.spread_bound_equivalent
            && self.implication_holds
    }
}

pub fn check_prop1_derivations(
    q: &ZeroSumVector,
    act_bits: u32,
    signed: bool,
    acc_bits: u32,
) -> Result<Prop1Report> {
    let (c, d) = act_range(act_bits, signed)?;
    let spec = AccumulatorSpec::new(acc_bits)?;
    let mu = extremal_max_input(&q.q, act_bits, signed)?;
    let nu = extremal_min_input(&q.q, act_bits, signed)?;
    let span = BigInt::from(i128::from(d) - i128::from(c));
    let f = exact_dot(&mu, &q.q);
    let e = exact_dot(&nu, &q.q);
    let alpha_span = &q.alpha * &span;
    let l1 = q.l1();

    let spread_elementwise = mu.iter().zip(&nu).zip(&q.q).all(|((&m, &n), &qi)| {
        qi == 0
            || i128::from(m) - i128::from(n) == (i128::from(d) - i128::from(c)) * i128::from(qi.signum())
    });

    let p = BigInt::one() << acc_bits as usize;
    let half_p = BigInt::one() << (acc_bits - 1) as usize;
    let l1r = BigRational::from_integer(l1.clone());
    let within = |numer: BigInt| l1r <= BigRational::new(numer, span.clone());
    let b1 = within(&p - 2);
    let b2 = within(p.clone());
    let b3 = within(&p - 1);
    let fits_max = f <= BigInt::from(spec.max());
    let fits_min = -&e <= half_p;
    let fits_spread = &f - &e <= &p - 1;

    Ok(Prop1Report {
        max_identity: f == alpha_span,
        min_identity: -&e == alpha_span,
        spread_elementwise,
        spread_identity: &f - &e == &span * &l1,
        max_bound_equivalent: fits_max == b1,
        min_bound_equivalent: fits_min == b2,
        spread_bound_equivalent: fits_spread == b3,
        implication_holds: !b1 || (b2 && b3),
    })
}

/// Checks `x^T q <= x^T w` for a triple satisfying the rounding lemma's
/// hypotheses; a triple that violates them is reported as an error.
pub fn check_lemma1(x: &[f64], w: &[f64], q: &[f64]) -> Result<bool> {
    check_same_len(x.len(), w.len())?;
    check_same_len(x.len(), q.len())?;
    for i in 0..x.len() {
        let (xi, wi, qi) = (x[i], w[i], q[i]);
        let q_sign_ok = qi == 0.0 || qi.signum() == wi.signum() && wi != 0.0;
        let x_sign_ok = xi == 0.0 || wi == 0.0 || xi.signum() == wi.signum();
        if !(q_sign_ok && x_sign_ok && qi.abs() <= wi.abs()) {
            return Err(Error::HypothesisViolation(i));
        }
    }
    let exact = |a: &[f64], b: &[f64]| -> BigRational {
        a.iter()
            .zip(b)
            .map(|(&u, &v)| {
                BigRational::from_float(u).unwrap_or_default()
                    * BigRational::from_float(v).unwrap_or_default()
            })
            .sum()
    };
    Ok(exact(x, q) <= exact(x, w))
}

/// Visits every integer vector of length `k` with `||q||_1 == l1`, in a fixed
/// order, until `visit` returns `true`. Returns the vector that stopped it.
pub fn search_with_l1<F>(k: usize, l1: u64, mut visit: F) -> Option<Vec<i64>>
where
    F: FnMut(&[i64]) -> bool,
{
    fn rec<F: FnMut(&[i64]) -> bool>(q: &mut Vec<i64>, k: usize, left: i64, visit: &mut F) -> bool {
        if q.len() + 1 == k {
            let last: &[i64] = if left == 0 { &[0] } else { &[-left, left] };
            for &v in last {
                q.push(v);
                if visit(q) {
                    return true;
                }
                q.pop();
            }
            return false;
        }
        for v in -left..=left {
            q.push(v);
            if rec(q, k, left - v.abs(), visit) {
                return true;
            }
            q.pop();
        }
        false
    }
    if k == 0 {
        return None;
    }
    let mut q = Vec::with_capacity(k);
    rec(&mut q, k, l1 as i64, &mut visit).then_some(q)
}

/// A search hit: the weights and their exhaustively computed witness.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrictnessWitness {
    pub q: Vec<i64>,
    pub witness: AccumWitness,
}

fn first_hit<P>(max_k: usize, l1_values: &[u64], act_bits: u32, signed: bool, acc: &AccumulatorSpec, mut keep: P) -> Result<Option<StrictnessWitness>>
where
    P: FnMut(&[i64], &AccumWitness) -> bool,
{
    for k in 1..=max_k {
        for &l1 in l1_values {
            let mut err = None;
            let mut hit = None;
            search_with_l1(k, l1, |q| {
                match exhaustive_check(q, act_bits, signed, acc, DEFAULT_ENUM_BUDGET) {
                    Ok(w) => {
                        if keep(q, &w) {
                            hit = Some(StrictnessWitness { q: q.to_vec(), witness: w });
                            return true;
                        }
                        false
                    }
                    Err(e) => {
                        err = Some(e);
                        true
                    }
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            if hit.is_some() {
                return Ok(hit);
            }
        }
    }
    Ok(None)
}

fn plus_budget_floor(act_bits: u32, acc_bits: u32) -> Result<u64> {
    let bits = BitWidths::new(2, act_bits, acc_bits, false)?;
    let floor = a2q_plus_limit(&bits)?.floor();
    u64::try_from(floor).map_err(|_| Error::Infeasible("budget too large to search".into()))
}

/// A zero-sum `q` whose norm is the largest even integer within the
/// zero-centered budget and which does not overflow.
pub fn find_budget_witness(
    acc_bits: u32,
    act_bits: u32,
    signed: bool,
    max_k: usize,
) -> Result<Option<StrictnessWitness>> {
    let acc = AccumulatorSpec::new(acc_bits)?;
    let floor = plus_budget_floor(act_bits, acc_bits)?;
    let target = floor - floor % 2;
    first_hit(max_k, &[target], act_bits, signed, &acc, |q, w| {
        q.iter().sum::<i64>() == 0 && !w.overflowed
    })
}

/// A `q` with norm one unit above the zero-centered budget's floor that overflows.
pub fn find_over_budget_overflow(
    acc_bits: u32,
    act_bits: u32,
    signed: bool,
    max_k: usize,
) -> Result<Option<StrictnessWitness>> {
    let acc = AccumulatorSpec::new(acc_bits)?;
    let floor = plus_budget_floor(act_bits, acc_bits)?;
    first_hit(max_k, &[floor + 1], act_bits, signed, &acc, |_, w| w.overflowed)
}

/// A `q` that is not zero-sum, fits the zero-centered budget, and overflows.
/// `None` when the budget admits no nonzero vector.
pub fn find_nonzero_sum_overflow(
    acc_bits: u32,
    act_bits: u32,
    signed: bool,
    max_k: usize,
) -> Result<Option<StrictnessWitness>> {
    let acc = AccumulatorSpec::new(acc_bits)?;
    let floor = plus_budget_floor(act_bits, acc_bits)?;
    let norms: Vec<u64> = (1..=floor).rev().collect();
    first_hit(max_k, &norms, act_bits, signed, &acc, |q, w| {
        q.iter().sum::<i64>() != 0 && w.overflowed
    })
}

/// Outcome of one smoke check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropCheck {
    pub name: String,
    pub cases: usize,
    pub passed: bool,
}

/// A quick battery over all the checks in this module.
pub fn smoke_suite(seed: u64) -> Result<Vec<PropCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // Zero-sum vectors within the relaxed budget never overflow, and the
    // derivation identities hold.
    let mut cases = 0;
    let mut ok = true;
    for acc_bits in 4..=8u32 {
        for act_bits in 1..=3u32 {
            let budget = plus_budget_floor(act_bits, acc_bits)?;
            let spec = AccumulatorSpec::new(acc_bits)?;
            for _ in 0..50 {
                let k = rng.random_range(2..=5);
                let z = gen_zero_sum_with(&mut rng, k, budget)?;
                let signed = rng.random_bool(0.5);
                let w = check_accumulator(&z.q, act_bits, signed, &spec)?;
                let r = check_prop1_derivations(&z, act_bits, signed, acc_bits)?;
                ok &= !w.overflowed && r.all_hold();
                cases += 1;
            }
        }
    }
    out.push(PropCheck { name: "zero-sum budget is overflow-free".into(), cases, passed: ok });

    // Hölder budget needs no zero sum.
    let mut cases = 0;
    let mut ok = true;
    for acc_bits in 4..=8u32 {
        for act_bits in 1..=3u32 {
            for signed in [false, true] {
                let bits = BitWidths::new(2, act_bits, acc_bits, signed)?;
                let floor = u64::try_from(a2q_limit(&bits)?.floor()).unwrap_or(0);
                let spec = AccumulatorSpec::new(acc_bits)?;
                for _ in 0..10 {
                    let k = rng.random_range(1..=3usize);
                    let q = random_with_l1_at_most(&mut rng, k, floor);
                    let w = exhaustive_check(&q, act_bits, signed, &spec, DEFAULT_ENUM_BUDGET)?;
                    ok &= !w.overflowed;
                    cases += 1;
                }
            }
        }
    }
    out.push(PropCheck { name: "hoelder budget is overflow-free".into(), cases, passed: ok });

    // Rounding lemma on random triples.
    let mut ok = true;
    for _ in 0..500 {
        let k = rng.random_range(1..=6usize);
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(-4.0..4.0)).collect();
        let q: Vec<f64> = w.iter().map(|x| x.trunc()).collect();
        let x: Vec<f64> = w
            .iter()
            .map(|x| x.signum() * f64::from(rng.random_range(0..8u8)))
            .collect();
        ok &= check_lemma1(&x, &w, &q)?;
    }
    out.push(PropCheck { name: "rounding lemma".into(), cases: 500, passed: ok });

    // Tightness and necessity of zero-centering at small sizes.
    let mut cases = 0;
    let mut ok = true;
    for acc_bits in 3..=6u32 {
        for act_bits in 1..=2u32 {
            for signed in [false, true] {
                ok &= find_budget_witness(acc_bits, act_bits, signed, 3)?.is_some();
                ok &= find_over_budget_overflow(acc_bits, act_bits, signed, 3)?.is_some();
                if plus_budget_floor(act_bits, acc_bits)? > 0 {
                    ok &= find_nonzero_sum_overflow(acc_bits, act_bits, signed, 3)?.is_some();
                }
                cases += 1;
            }
        }
    }
    out.push(PropCheck { name: "budget tightness witnesses".into(), cases, passed: ok });
    Ok(out)
}

/// Uniform-ish random integer vector with `||q||_1 <= budget`.
pub fn random_with_l1_at_most<R: Rng>(rng: &mut R, k: usize, budget: u64) -> Vec<i64> {
    let total = rng.random_range(0..=budget);
    let mut q = vec![0i64; k];
    for _ in 0..total {
        let i = rng.random_range(0..k);
        q[i] += 1;
    }
    for v in q.iter_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    debug_assert!(q.iter().map(|v| v.unsigned_abs()).sum::<u64>() <= budget);
    q
}
