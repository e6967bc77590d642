//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Numeric arguments select criteria:
//! `cargo test --release --test acceptance -- 1 6`.

use std::collections::BTreeMap;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use accq::bounds::int_range;
use accq::epinit::{ep_init_with_radius, init_scale, naive_init};
use accq::intsim::{exact_dot, extremal_max_input, extremal_min_input, DEFAULT_ENUM_BUDGET};
use accq::props::{find_budget_witness, find_nonzero_sum_overflow, find_over_budget_overflow};
use accq::qat::{float_baseline, gradient_check, train_from, TrainConfig};
use accq::quantizers::quantize_with_limit;
use accq::*;
use num::{BigInt, BigRational, One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn pow2(e: u32) -> BigInt {
    BigInt::one() << e as usize
}

/// Largest and smallest dot product over `[c, d]^K`, per coordinate.
fn sign_pattern_extremes(q: &[i64], c: i64, d: i64) -> (BigInt, BigInt) {
    let mut hi = BigInt::zero();
    let mut lo = BigInt::zero();
    for &qi in q {
        let (a, b) = (BigInt::from(qi) * c, BigInt::from(qi) * d);
        if a > b {
            hi += a;
            lo += b;
        } else {
            hi += b;
            lo += a;
        }
    }
    (hi, lo)
}

fn fits(p: u32, hi: &BigInt, lo: &BigInt) -> bool {
    *hi < pow2(p - 1) && *lo >= -pow2(p - 1)
}

fn c1_bound_ratio() -> Verdict {
    let mut mismatches = Vec::new();
    for signed in [false, true] {
        let s = u32::from(signed);
        for n in 1..=8u32 {
            let r = bound_ratio(n, signed).unwrap();
            let closed = BigRational::new(pow2(n + 1 - s), pow2(n) - 1);
            // The same gain as the quotient of the two budgets at any P.
            let bits = BitWidths::new(8, n, 20, signed).unwrap();
            let quotient = a2q_plus_limit(&bits).unwrap().as_ratio() / a2q_limit(&bits).unwrap().as_ratio();
            if *r.as_ratio() != closed || *r.as_ratio() != quotient {
                mismatches.push(format!("N={n} signed={signed}"));
            }
        }
    }
    let four = *bound_ratio(1, false).unwrap().as_ratio() == BigRational::from_integer(4.into());
    let two = *bound_ratio(1, true).unwrap().as_ratio() == BigRational::from_integer(2.into());
    verdict(
        mismatches.is_empty() && four && two,
        format!("16 ratios exact, mismatches {mismatches:?}, N=1 unsigned 4: {four}, signed 2: {two}"),
    )
}

/// A channel whose norm lands anywhere from a quarter to four times the
/// integer budget, so both the clamped and the unclamped regimes occur.
fn random_channel(rng: &mut ChaCha8Rng, k: usize, limit: f64) -> ChannelWeights {
    let v: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
    let d: f64 = rng.random_range(-3.0..1.0);
    let t = (d.exp2() * limit.max(0.5)).log2() + rng.random_range(-2.0..2.0);
    ChannelWeights::new(v, t, d)
}

fn overflow_protocol(centered: bool) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(if centered { 3 } else { 2 });
    let (mut total, mut overflows, mut exhaustive, mut bad_sum, mut bad_prop2, mut over_budget) = (0, 0, 0, 0, 0, 0);
    for k in 1..=5usize {
        for n in 1..=4u32 {
            for p in 4..=10u32 {
                let acc = AccumulatorSpec::new(p).unwrap();
                for i in 0..10_000 {
                    let signed = i % 2 == 1;
                    let bits = BitWidths::new(4, n, p, signed).unwrap();
                    let limit = if centered && k >= 2 { a2q_plus_limit(&bits) } else { a2q_limit(&bits) }.unwrap();
                    let ch = random_channel(&mut rng, k, limit.to_f64());
                    let r = if centered { quantize_a2q_plus(&ch, &bits) } else { quantize_a2q(&ch, &bits) }.unwrap();
                    total += 1;
                    let l1: BigInt = r.q.iter().map(|&x| BigInt::from(x.abs())).sum();
                    if BigRational::from(l1) > *limit.as_ratio() {
                        over_budget += 1;
                    }
                    let w = check_accumulator(&r.q, n, signed, &acc).unwrap();
                    let (c, d) = int_range(n, signed);
                    let (hi, lo) = sign_pattern_extremes(&r.q, c, d);
                    if w.overflowed || !fits(p, &hi, &lo) {
                        overflows += 1;
                    }
                    if i < 1000 {
                        exhaustive += 1;
                        let e = exhaustive_check(&r.q, n, signed, &acc, DEFAULT_ENUM_BUDGET).unwrap();
                        if e.overflowed || e.true_max != hi || e.true_min != lo {
                            overflows += 1;
                        }
                    }
                    if centered && k >= 2 {
                        let sum: f64 = r.w.iter().sum();
                        let scale = r.w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                        if sum.abs() > k as f64 * 1e-12 * scale.max(f64::MIN_POSITIVE) {
                            bad_sum += 1;
                        }
                        if !verify_prop2(&r.w, r.s, &r.q).unwrap() {
                            bad_prop2 += 1;
                        }
                    }
                }
            }
        }
    }
    let mut detail = format!(
        "{total} channels over 140 (K,N,P) cells, {exhaustive} also enumerated: {overflows} overflows, {over_budget} over budget"
    );
    if centered {
        detail += &format!(", {bad_sum} nonzero sums, {bad_prop2} failed sign/magnitude transfer");
    }
    verdict(overflows == 0 && over_budget == 0 && bad_sum == 0 && bad_prop2 == 0, detail)
}

fn c4_extremal_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let acc = AccumulatorSpec::new(64).unwrap();
    let mut mismatches = 0;
    for i in 0..10_000 {
        let k = rng.random_range(1..=4);
        let n = rng.random_range(1..=3);
        let signed = i % 2 == 1;
        let q: Vec<i64> = (0..k).map(|_| rng.random_range(-200..=200)).collect();
        let mu = extremal_max_input(&q, n, signed).unwrap();
        let nu = extremal_min_input(&q, n, signed).unwrap();
        let e = exhaustive_check(&q, n, signed, &acc, DEFAULT_ENUM_BUDGET).unwrap();
        if e.true_max != exact_dot(&mu, &q) || e.true_min != exact_dot(&nu, &q) {
            mismatches += 1;
        }
    }
    verdict(mismatches == 0, format!("10000 random q: {mismatches} mismatches"))
}

fn c5_strictness() -> Verdict {
    let mut missing = Vec::new();
    let mut found = 0;
    for p in 4..=8u32 {
        for n in 1..=3u32 {
            let budget_num = pow2(p) - 2;
            let budget_den = pow2(n) - 1;
            let within = |q: &[i64]| BigInt::from(q.iter().map(|x| x.abs()).sum::<i64>()) * &budget_den <= budget_num;
            let overflows = |q: &[i64]| {
                let (hi, lo) = sign_pattern_extremes(q, 0, (1 << n) - 1);
                !fits(p, &hi, &lo)
            };
            let a = find_budget_witness(p, n, false, 4).unwrap();
            let a_ok = a.is_some_and(|w| {
                // Even norm within one unit of the budget floor.
                let l1 = BigInt::from(w.q.iter().map(|x| x.abs()).sum::<i64>());
                let next = (&l1 + 2u8) * &budget_den;
                w.q.iter().sum::<i64>() == 0 && within(&w.q) && next > budget_num && !overflows(&w.q)
            });
            let b = find_over_budget_overflow(p, n, false, 4).unwrap();
            let b_ok = b.is_some_and(|w| {
                let l1 = BigInt::from(w.q.iter().map(|x| x.abs()).sum::<i64>());
                !within(&w.q) && (l1 - 1u8) * &budget_den <= budget_num && overflows(&w.q)
            });
            let c = find_nonzero_sum_overflow(p, n, false, 4).unwrap();
            let c_ok = c.is_some_and(|w| w.q.iter().sum::<i64>() != 0 && within(&w.q) && overflows(&w.q));
            for (tag, ok) in [("a", a_ok), ("b", b_ok), ("c", c_ok)] {
                if ok {
                    found += 1;
                } else {
                    missing.push(format!("({tag}) P={p} N={n}"));
                }
            }
        }
    }
    verdict(
        missing.is_empty(),
        format!("{found}/45 witnesses found and re-checked over P 4-8, N 1-3 unsigned, K <= 4; missing {missing:?}"),
    )
}

fn objective(v: &[f64], w: &[f64]) -> f64 {
    0.5 * v.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

/// Exact minimizer by enumerating supports: on the face with support `S`
/// the optimum is `w_i - sign(w_i) theta` with `theta` fixed by the radius.
fn active_set_best(w: &[f64], radius: f64) -> f64 {
    let l1: f64 = w.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return 0.0;
    }
    let k = w.len();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << k) {
        let support: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 1).collect();
        let theta = (support.iter().map(|&i| w[i].abs()).sum::<f64>() - radius) / support.len() as f64;
        if theta < 0.0 || support.iter().any(|&i| w[i].abs() < theta) {
            continue;
        }
        let v: Vec<f64> = (0..k)
            .map(|i| if mask >> i & 1 == 1 { w[i] - w[i].signum() * theta } else { 0.0 })
            .collect();
        best = best.min(objective(&v, w));
    }
    best
}

/// Frank-Wolfe over the l1 ball with exact line search; every iterate is
/// feasible, so its objective bounds the optimum from above.
fn frank_wolfe_best(w: &[f64], radius: f64, iters: usize) -> f64 {
    let mut v = vec![0.0; w.len()];
    let mut best = objective(&v, w);
    for _ in 0..iters {
        let grad: Vec<f64> = v.iter().zip(w).map(|(a, b)| a - b).collect();
        let (j, gj) = grad
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(j, g)| (j, *g))
            .unwrap();
        let mut vertex = vec![0.0; w.len()];
        vertex[j] = -gj.signum() * radius;
        let dir: Vec<f64> = vertex.iter().zip(&v).map(|(a, b)| a - b).collect();
        let dd: f64 = dir.iter().map(|x| x * x).sum();
        if dd == 0.0 {
            break;
        }
        let gamma = (-grad.iter().zip(&dir).map(|(g, d)| g * d).sum::<f64>() / dd).clamp(0.0, 1.0);
        v.iter_mut().zip(&dir).for_each(|(a, d)| *a += gamma * d);
        best = best.min(objective(&v, w));
    }
    best
}

fn c6_projection() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut worst_exact, mut worst_fw, mut worst_boundary, mut active) = (0.0f64, f64::NEG_INFINITY, 0.0f64, 0);
    for _ in 0..1000 {
        let k = rng.random_range(1..=4);
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
        let l1: f64 = w.iter().map(|x| x.abs()).sum();
        let radius = l1 * rng.random_range(0.05..1.3) + 1e-3;
        let r = project_l1_ball(&w, radius).unwrap();
        let obj = objective(&r.v_star, &w);
        worst_exact = worst_exact.max((obj - active_set_best(&w, radius)).abs());
        worst_fw = worst_fw.max(obj - frank_wolfe_best(&w, radius, 2000));
        if l1 > radius {
            active += 1;
            let norm: f64 = r.v_star.iter().map(|x| x.abs()).sum();
            worst_boundary = worst_boundary.max((norm - radius).abs());
        }
    }
    verdict(
        worst_exact <= 1e-6 && worst_fw <= 1e-6 && worst_boundary <= 1e-9,
        format!(
            "1000 cases ({active} active): max gap to active-set optimum {worst_exact:.2e}, \
             max excess over Frank-Wolfe {worst_fw:.2e}, max boundary error {worst_boundary:.2e}"
        ),
    )
}

fn c7_ep_init() -> Verdict {
    const M: u32 = 4;
    const K: usize = 64;
    let fractions = [0.5, 0.25, 0.125];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut wins = [0usize; 3];
    let mut gap_sum = [0.0f64; 3];
    let mut naive_all_zero = [0usize; 3];
    for _ in 0..1000 {
        let w: Vec<f64> = (0..K).map(|_| rng.sample(StandardNormal)).collect();
        let l1: f64 = w.iter().map(|x| x.abs()).sum();
        let s = init_scale(&w, M).unwrap();
        for (j, frac) in fractions.iter().enumerate() {
            let radius = frac * l1;
            let limit = RationalBound::from_f64(radius / s).unwrap();
            let quant = |ch: &ChannelWeights| {
                let (r, _) = quantize_with_limit(ch, &limit, M, false, QuantMode::Quantize).unwrap();
                (weight_quant_error(&r.qw, &w, true).unwrap(), r.zeros() == K)
            };
            let (ep, _) = quant(&ep_init_with_radius(&w, s, radius).unwrap());
            let (naive, zeroed) = quant(&naive_init(&w, s));
            naive_all_zero[j] += usize::from(zeroed);
            wins[j] += usize::from(ep <= naive);
            gap_sum[j] += naive - ep;
        }
    }
    let gaps: Vec<f64> = gap_sum.iter().map(|g| g / 1000.0).collect();
    let monotone = gaps.windows(2).all(|p| p[1] >= p[0]);
    verdict(
        wins.iter().all(|&c| c == 1000) && monotone,
        format!(
            "M={M} K={K}: EP-init no worse in {wins:?} of 1000 at budgets 1/2, 1/4, 1/8; \
             mean gaps {:.4} {:.4} {:.4}; naive channels with all-zero codes {naive_all_zero:?}",
            gaps[0], gaps[1], gaps[2]
        ),
    )
}

fn c8_gradients() -> Verdict {
    let reports: Vec<_> = (0..20).map(|seed| gradient_check(seed).unwrap()).collect();
    let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let params: usize = reports.iter().map(|r| r.params).sum();
    verdict(worst < 1e-5, format!("20 seeds, {params} parameters, max relative error {worst:.2e}"))
}

fn c9_qat() -> Verdict {
    let bits = |p| BitWidths::new(4, 4, p, false).unwrap();
    let rows: Vec<(u64, Variant, u32, f64, f64, f64)> = (0..10u64)
        .into_par_iter()
        .flat_map_iter(|seed| {
            let base = TrainConfig::new(Variant::A2Q, bits(32), seed);
            let (data, float) = float_baseline(&base).unwrap();
            let mut out = Vec::new();
            for variant in [Variant::A2Q, Variant::A2QPlus] {
                for p in [12, 16, 32] {
                    let config = TrainConfig::new(variant, bits(p), seed);
                    let o = train_from(&config, &data, float.clone()).unwrap();
                    out.push((seed, variant, p, o.record.final_loss, o.record.sparsity, o.float_loss));
                }
            }
            out
        })
        .collect();
    let get = |seed, variant, p| {
        *rows
            .iter()
            .find(|r| r.0 == seed && r.1 == variant && r.2 == p)
            .expect("every run present")
    };
    let a = (0..10).filter(|&s| get(s, Variant::A2QPlus, 12).3 <= get(s, Variant::A2Q, 12).3).count();
    let mut b = BTreeMap::new();
    let mut c_fail = Vec::new();
    let mut worst_ratio = 0.0f64;
    for variant in [Variant::A2Q, Variant::A2QPlus] {
        let n = (0..10).filter(|&s| get(s, variant, 12).4 > get(s, variant, 16).4).count();
        b.insert(variant.name(), n);
        for s in 0..10 {
            let r = get(s, variant, 32);
            let ratio = r.3 / r.5;
            worst_ratio = worst_ratio.max(ratio);
            if ratio > 1.05 {
                c_fail.push(format!("{variant} seed {s} ratio {ratio:.4}"));
            }
        }
    }
    let pass = a >= 7 && b.values().all(|&n| n >= 8) && c_fail.is_empty();
    verdict(
        pass,
        format!(
            "(a) a2q+ <= a2q at P=12 in {a}/10; (b) sparsity P12 > P16 in {b:?}/10; \
             (c) P=32 worst loss/float {worst_ratio:.4}, over 1.05: {c_fail:?}"
        ),
    )
}

fn c10_p_star() -> Verdict {
    let acc_cache = |p| AccumulatorSpec::new(p).unwrap();
    let mut cells = 0;
    let mut pairs: u128 = 0;
    let mut unsafe_cells = Vec::new();
    for signed in [false, true] {
        for m in 2..=4u32 {
            for n in 1..=3u32 {
                for k in 1..=4usize {
                    let p = min_acc_width(k as i64, &BitWidths::new(m, n, 32, signed).unwrap()).unwrap();
                    let acc = acc_cache(p);
                    let (lo, hi) = int_range(m, true);
                    let mut q = vec![lo; k];
                    let mut ok = true;
                    loop {
                        let e = exhaustive_check(&q, n, signed, &acc, DEFAULT_ENUM_BUDGET).unwrap();
                        pairs += 1u128 << (n as usize * k);
                        ok &= !e.overflowed;
                        let mut pos = 0;
                        while pos < k && q[pos] == hi {
                            q[pos] = lo;
                            pos += 1;
                        }
                        if pos == k {
                            break;
                        }
                        q[pos] += 1;
                    }
                    cells += 1;
                    if !ok {
                        unsafe_cells.push(format!("K={k} M={m} N={n} signed={signed} P*={p}"));
                    }
                }
            }
        }
    }
    verdict(
        unsafe_cells.is_empty(),
        format!("{cells} (K*, M, N, signedness) cells, {pairs} (q, x) pairs; overflowing cells {unsafe_cells:?}"),
    )
}

fn c11_determinism() -> Verdict {
    let run = || {
        let o = Command::new(env!("CARGO_BIN_EXE_accq"))
            .args(["train", "--variant", "a2q+", "--M", "4", "--N", "4", "--P", "14", "--seed", "3"])
            .output()
            .expect("binary runs");
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        o.stdout
    };
    let (first, second) = (run(), run());
    let row = String::from_utf8_lossy(&first).lines().nth(1).unwrap_or("").to_string();
    verdict(first == second && !row.is_empty(), format!("two runs byte-identical: {}; row {row}", first == second))
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: fn() -> Verdict,
}

fn main() -> ExitCode {
    let minute = Duration::from_secs(60);
    let criteria = [
        Criterion { id: 1, name: "bound ratio", limit: Duration::from_secs(1), run: c1_bound_ratio },
        Criterion { id: 2, name: "overflow freedom a2q", limit: 5 * minute, run: || overflow_protocol(false) },
        Criterion { id: 3, name: "overflow freedom a2q+", limit: 5 * minute, run: || overflow_protocol(true) },
        Criterion { id: 4, name: "extremal oracle", limit: 2 * minute, run: c4_extremal_oracle },
        Criterion { id: 5, name: "strictness witnesses", limit: 2 * minute, run: c5_strictness },
        Criterion { id: 6, name: "projection optimality", limit: 3 * minute, run: c6_projection },
        Criterion { id: 7, name: "ep-init dominance", limit: minute, run: c7_ep_init },
        Criterion { id: 8, name: "gradient check", limit: minute, run: c8_gradients },
        Criterion { id: 9, name: "directional qat", limit: 15 * minute, run: c9_qat },
        Criterion { id: 10, name: "P* safety", limit: 5 * minute, run: c10_p_star },
        Criterion { id: 11, name: "determinism", limit: 5 * minute, run: c11_determinism },
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        let start = Instant::now();
        let v = (c.run)();
        let elapsed = start.elapsed();
        let in_time = elapsed <= c.limit;
        let pass = v.pass && in_time;
        failed += usize::from(!pass);
        println!(
            "[{}] {:>2} {}: {} ({:.1}s of {}s{})",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            v.detail,
            elapsed.as_secs_f64(),
            c.limit.as_secs(),
            if in_time { "" } else { ", over time" },
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
