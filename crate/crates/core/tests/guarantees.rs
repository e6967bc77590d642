//! End-to-end properties of the public API: every constrained quantizer
//! output must fit its accumulator for every input, and the closed forms
//! must agree with independent computations.

use accq::bounds::int_range;
use accq::intsim::{exact_dot, DEFAULT_ENUM_BUDGET};
use accq::*;
use num::{BigInt, BigRational, ToPrimitive};
use proptest::prelude::*;

fn pow2(e: u32) -> BigInt {
    BigInt::from(1u8) << e as usize
}

fn widths() -> impl Strategy<Value = (u32, u32, u32, bool)> {
    (2u32..=8, 1u32..=4, 4u32..=16, any::<bool>())
}

fn channel(max_k: usize) -> impl Strategy<Value = ChannelWeights> {
    (
        prop::collection::vec(-4.0f64..4.0, 1..=max_k),
        -2.0f64..6.0,
        -6.0f64..0.0,
    )
        .prop_map(|(v, t, d)| ChannelWeights::new(v, t, d))
}

/// Worst-case dot products from the sign pattern of `q` alone.
fn brute_extremes(q: &[i64], act_bits: u32, signed: bool) -> (BigInt, BigInt) {
    let (c, d) = int_range(act_bits, signed);
    let mut hi = BigInt::from(0);
    let mut lo = BigInt::from(0);
    for &qi in q {
        let (a, b) = (BigInt::from(qi) * c, BigInt::from(qi) * d);
        hi += a.clone().max(b.clone());
        lo += a.min(b);
    }
    (hi, lo)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ratio_is_quotient_of_the_two_limits((m, n, p, signed) in widths()) {
        let bits = BitWidths::new(m, n, p, signed).unwrap();
        let plus = a2q_plus_limit(&bits).unwrap();
        let base = a2q_limit(&bits).unwrap();
        let quotient = plus.as_ratio() / base.as_ratio();
        prop_assert_eq!(quotient, bound_ratio(n, signed).unwrap().as_ratio().clone());
    }

    #[test]
    fn limits_match_integer_closed_forms((m, n, p, signed) in widths()) {
        let bits = BitWidths::new(m, n, p, signed).unwrap();
        let s = u32::from(signed);
        let base = BigRational::new(pow2(p - 1) - 1, pow2(n - s));
        let plus = BigRational::new(pow2(p) - 2, pow2(n) - 1);
        prop_assert_eq!(a2q_limit(&bits).unwrap().as_ratio().clone(), base);
        prop_assert_eq!(a2q_plus_limit(&bits).unwrap().as_ratio().clone(), plus);
    }

    #[test]
    fn a2q_codes_never_overflow(ch in channel(24), (m, n, p, signed) in widths()) {
        let bits = BitWidths::new(m, n, p, signed).unwrap();
        let r = quantize_a2q(&ch, &bits).unwrap();
        prop_assert!(r.bound_satisfied);
        prop_assert!(BigRational::from(r.l1_exact()) <= *a2q_limit(&bits).unwrap().as_ratio());
        let acc = AccumulatorSpec::new(p).unwrap();
        let w = check_accumulator(&r.q, n, signed, &acc).unwrap();
        prop_assert!(!w.overflowed, "q = {:?}", r.q);
        let (hi, lo) = brute_extremes(&r.q, n, signed);
        prop_assert_eq!(w.true_max, hi);
        prop_assert_eq!(w.true_min, lo);
    }

    #[test]
    fn a2q_plus_codes_are_zero_centered_and_safe(ch in channel(24), (m, n, p, signed) in widths()) {
        prop_assume!(ch.k() >= 2);
        let bits = BitWidths::new(m, n, p, signed).unwrap();
        let r = quantize_a2q_plus(&ch, &bits).unwrap();
        prop_assert_eq!(r.variant, Variant::A2QPlus);
        let sum: f64 = r.w.iter().sum();
        let scale = r.w.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1.0);
        prop_assert!(sum.abs() <= r.k() as f64 * 1e-12 * scale, "sum {}", sum);
        prop_assert!(verify_prop2(&r.w, r.s, &r.q).unwrap());
        let acc = AccumulatorSpec::new(p).unwrap();
        prop_assert!(!check_accumulator(&r.q, n, signed, &acc).unwrap().overflowed);
    }

    #[test]
    fn projection_satisfies_optimality_conditions(
        w in prop::collection::vec(-10.0f64..10.0, 1..=12),
        frac in 0.05f64..1.5,
    ) {
        let l1: f64 = w.iter().map(|x| x.abs()).sum();
        prop_assume!(l1 > 1e-6);
        let radius = frac * l1;
        let r = project_l1_ball(&w, radius).unwrap();
        let norm: f64 = r.v_star.iter().map(|x| x.abs()).sum();
        prop_assert!(norm <= radius * (1.0 + 1e-12));
        if l1 > radius {
            prop_assert!((norm - radius).abs() <= 1e-9 * radius);
            // Soft thresholding at theta.
            for (wi, vi) in w.iter().zip(&r.v_star) {
                let expect = wi.signum() * (wi.abs() - r.theta).max(0.0);
                prop_assert!((vi - expect).abs() <= 1e-9 * (1.0 + wi.abs()));
            }
        } else {
            prop_assert_eq!(&r.v_star, &w);
        }
    }
}

#[test]
fn exhaustive_and_extremal_agree_on_quantizer_output() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let k = rng.random_range(1..=4);
        let n = rng.random_range(1..=3);
        let p = rng.random_range(4..=10);
        let signed = rng.random_bool(0.5);
        let v: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ch = ChannelWeights::new(v, rng.random_range(0.0..5.0), rng.random_range(-3.0..0.0));
        let bits = BitWidths::new(4, n, p, signed).unwrap();
        let acc = AccumulatorSpec::new(p).unwrap();
        for r in [quantize_a2q(&ch, &bits).unwrap(), quantize_a2q_plus(&ch, &bits).unwrap()] {
            let fast = check_accumulator(&r.q, n, signed, &acc).unwrap();
            let slow = exhaustive_check(&r.q, n, signed, &acc, DEFAULT_ENUM_BUDGET).unwrap();
            assert_eq!(fast.true_max, slow.true_max);
            assert_eq!(fast.true_min, slow.true_min);
            assert!(!slow.overflowed, "{:?} at P={p} N={n}", r.q);
        }
    }
}

#[test]
fn min_acc_width_covers_every_unconstrained_dot_product() {
    for signed in [false, true] {
        for m in 2..=4u32 {
            for n in 1..=3u32 {
                for k in 1..=6i64 {
                    let bits = BitWidths::new(m, n, 32, signed).unwrap();
                    let p = min_acc_width(k, &bits).unwrap();
                    // The most negative code has the largest magnitude.
                    let (qmin, _) = int_range(m, true);
                    let q = vec![qmin; k as usize];
                    let (hi, lo) = brute_extremes(&q, n, signed);
                    let acc = AccumulatorSpec::new(p).unwrap();
                    assert!(acc.contains(&hi) && acc.contains(&lo), "K={k} M={m} N={n} P*={p}");
                }
            }
        }
    }
}

#[test]
fn wrapping_matches_two_complement_arithmetic() {
    let acc = AccumulatorSpec::new(8).unwrap();
    for value in -600i64..600 {
        let wrapped = acc.wrap(&BigInt::from(value));
        assert_eq!(wrapped, i128::from(value as i8));
    }
    let q = [100, 100];
    let (got, changed) = intsim::wrapping_dot(&[1, 1], &q, &acc).unwrap();
    assert!(changed);
    assert_eq!(got, -56);
    assert_eq!(exact_dot(&[1, 1], &q).to_i64(), Some(200));
}

#[test]
fn standard_quantizer_is_unconstrained() {
    let spec = ActQuantSpec::symmetric(4, true, 0.5);
    let r = quantize_standard(&[3.0, -4.0, 0.24, 100.0], &spec).unwrap();
    assert_eq!(r.q, vec![6, -8, 0, 7]);
    assert!(r.bound.is_none());
}
