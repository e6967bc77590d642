//! Per-channel weight quantizers.
//!
//! Three quantizers live here:
//!
//! * the standard affine quantizer (round half to even, clip, optional zero point),
//! * the l1-constrained quantizer, which rescales the direction `v / ||v||_1`
//!   to `min(g, T)` with `T = s * (2^(P-1) - 1) / 2^(N - signed)` and then
//!   rounds toward zero,
//! * the zero-centered variant, which subtracts the mean of `v` first and uses
//!   the larger budget `T+ = s * (2^P - 2) / (2^N - 1)`.
//!
//! Norm and scale are parameterized in the log domain (`g = 2^t`, `s = 2^d`).
//! [`forward_weights`] additionally returns a [`BackwardTape`] that applies the
//! straight-through estimator for the manual backward pass.

use std::f64::consts::LN_2;
use std::fmt;
use std::str::FromStr;

use num::bigint::BigInt;
use serde::{Deserialize, Serialize};

use crate::bounds::{a2q_limit, a2q_plus_limit, int_range, BitWidths, RationalBound};
use crate::error::{check_finite, Error, Result};

/// Channels shorter than this cannot be zero-centered without collapsing to
/// zero; the zero-centered quantizer falls back to the plain l1 quantizer.
pub const K_MIN_CENTER: usize = 2;

/// Norm exponent used when a channel has zero l1 norm.
pub const ZERO_NORM_EXPONENT: f64 = -30.0;

/// Relative distance to an integer under which a pre-round value is treated
/// as that integer. Absorbs the rounding noise of the normalization and the
/// `2^t` round trip so re-quantizing a quantized channel is stable.
pub const SNAP_TOL: f64 = 1e-12;

/// Tolerance factor (per element) on the zero-sum and budget checks of the
/// zero-centered quantizer.
pub const CENTER_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "base")]
    Standard,
    #[serde(rename = "a2q")]
    A2Q,
    #[serde(rename = "a2q+")]
    A2QPlus,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Standard => "base",
            Variant::A2Q => "a2q",
            Variant::A2QPlus => "a2q+",
        }
    }

    /// The integer-domain l1 budget this variant enforces, if any.
    pub fn limit(&self, bits: &BitWidths) -> Result<Option<RationalBound>> {
        Ok(match self {
            Variant::Standard => None,
            Variant::A2Q => Some(a2q_limit(bits)?),
            Variant::A2QPlus => Some(a2q_plus_limit(bits)?),
        })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "base" | "standard" => Ok(Variant::Standard),
            "a2q" => Ok(Variant::A2Q),
            "a2q+" | "a2qplus" | "a2q-plus" => Ok(Variant::A2QPlus),
            other => Err(Error::InvalidConfig(format!("unknown variant {other:?}"))),
        }
    }
}

/// One output channel's learned parameters: direction `v`, norm exponent `t`
/// (`g = 2^t`) and scale exponent `d` (`s = 2^d`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelWeights {
    pub v: Vec<f64>,
    pub t: f64,
    pub d: f64,
}

impl ChannelWeights {
    pub fn new(v: Vec<f64>, t: f64, d: f64) -> Self {
        ChannelWeights { v, t, d }
    }

    /// Builds a channel from a norm and scale in the linear domain.
    pub fn from_norm_and_scale(v: Vec<f64>, g: f64, s: f64) -> Self {
        ChannelWeights {
            v,
            t: norm_exponent(g),
            d: s.log2(),
        }
    }

    pub fn k(&self) -> usize {
        self.v.len()
    }

    pub fn g(&self) -> f64 {
        self.t.exp2()
    }

    pub fn s(&self) -> f64 {
        self.d.exp2()
    }

    fn validate(&self) -> Result<()> {
        if self.v.is_empty() {
            return Err(Error::InvalidConfig("channel must have K >= 1".into()));
        }
        check_finite(&self.v)?;
        if !self.t.is_finite() || !self.d.is_finite() {
            return Err(Error::NonFinite(self.v.len()));
        }
        Ok(())
    }
}

/// `log2(g)`, or [`ZERO_NORM_EXPONENT`] for a zero norm.
pub fn norm_exponent(g: f64) -> f64 {
    if g > 0.0 {
        g.log2()
    } else {
        ZERO_NORM_EXPONENT
    }
}

/// Parameters of the affine quantizer `s * (clip(round(x / s) + z; n, p) - z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActQuantSpec {
    pub bits: u32,
    pub signed: bool,
    pub scale: f64,
    pub zero_point: i64,
}

impl ActQuantSpec {
    pub fn symmetric(bits: u32, signed: bool, scale: f64) -> Self {
        ActQuantSpec {
            bits,
            signed,
            scale,
            zero_point: 0,
        }
    }

    pub fn range(&self) -> (i64, i64) {
        int_range(self.bits, self.signed)
    }

    fn validate(&self) -> Result<()> {
        if !(1..=64).contains(&self.bits) {
            return Err(Error::InvalidBitWidth(format!(
                "quantizer bits must lie in [1, 64], got {}",
                self.bits
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "quantizer scale must be positive, got {}",
                self.scale
            )));
        }
        let (n, p) = self.range();
        if self.zero_point < n || self.zero_point > p {
            return Err(Error::InvalidConfig(format!(
                "zero point {} outside [{n}, {p}]",
                self.zero_point
            )));
        }
        Ok(())
    }
}

/// Output of a weight quantizer for one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantResult {
    /// Integer codes.
    pub q: Vec<i64>,
    /// `s * q`.
    pub qw: Vec<f64>,
    /// Real weights before rounding (the constrained `w` for l1 variants).
    pub w: Vec<f64>,
    pub s: f64,
    /// `||q||_1`.
    pub l1_codes: f64,
    /// Integer-domain budget (`T / s` or `T+ / s`); `None` for the standard quantizer.
    pub bound: Option<RationalBound>,
    /// Certificate: the variant's bound was checked and holds.
    pub bound_satisfied: bool,
    /// The quantizer that actually ran (short zero-centered channels report `A2Q`).
    pub variant: Variant,
}

impl QuantResult {
    pub fn k(&self) -> usize {
        self.q.len()
    }

    /// Exact `||q||_1`.
    pub fn l1_exact(&self) -> BigInt {
        self.q.iter().map(|&x| BigInt::from(x.unsigned_abs())).sum()
    }

    /// `||w / s||_1`.
    pub fn scaled_l1(&self) -> f64 {
        self.w.iter().map(|w| (w / self.s).abs()).sum()
    }

    /// Budget minus `||q||_1`, exactly.
    pub fn slack(&self) -> Option<RationalBound> {
        self.bound.as_ref().map(|b| b.slack_int(&self.l1_exact()))
    }

    /// Number of zero codes.
    pub fn zeros(&self) -> usize {
        self.q.iter().filter(|&&c| c == 0).count()
    }
}

/// Half-way ties go to the even neighbour.
#[inline]
pub fn round_nearest(x: f64) -> f64 {
    x.round_ties_even()
}

/// Elementwise truncation toward zero.
pub fn round_to_zero(x: &[f64]) -> Result<Vec<i64>> {
    check_finite(x)?;
    Ok(x.iter().map(|v| v.trunc() as i64).collect())
}

/// The standard affine quantizer with round-half-to-even.
pub fn quantize_standard(w: &[f64], spec: &ActQuantSpec) -> Result<QuantResult> {
    spec.validate()?;
    check_finite(w)?;
    let (n, p) = spec.range();
    let s = spec.scale;
    let z = spec.zero_point;
    let q: Vec<i64> = w
        .iter()
        .map(|&x| {
            let r = round_nearest(x / s) as i64;
            r.saturating_add(z).clamp(n, p) - z
        })
        .collect();
    let qw = q.iter().map(|&c| s * c as f64).collect();
    let l1_codes = q.iter().map(|&c| c.unsigned_abs() as f64).sum();
    Ok(QuantResult {
        q,
        qw,
        w: w.to_vec(),
        s,
        l1_codes,
        bound: None,
        bound_satisfied: true,
        variant: Variant::Standard,
    })
}

/// Whether the quantizer rounds in the forward pass or is replaced by the
/// identity (used to check the smooth part of the gradient).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    Quantize,
    Identity,
}

/// Gradients with respect to one channel's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGrad {
    pub v: Vec<f64>,
    pub t: f64,
    pub d: f64,
}

impl ChannelGrad {
    pub fn zeros(k: usize) -> Self {
        ChannelGrad {
            v: vec![0.0; k],
            t: 0.0,
            d: 0.0,
        }
    }
}

/// Everything the manual backward pass of a weight quantizer needs.
#[derive(Debug, Clone)]
pub struct BackwardTape {
    mode: QuantMode,
    /// Standard quantizer: `v` are the weights themselves.
    standard: bool,
    /// Zero direction: the output is identically zero.
    degenerate: bool,
    centered: bool,
    /// `g > T`: the norm was replaced by the budget.
    pub norm_clipped: bool,
    /// Elements whose code hit the M-bit clip limits.
    pub code_clipped: Vec<bool>,
    l1_dir: f64,
    dir: Vec<f64>,
    sign_u: Vec<f64>,
    norm: f64,
    g: f64,
    s: f64,
    limit: f64,
    y: Vec<f64>,
    codes: Vec<f64>,
}

impl BackwardTape {
    /// Chain factor `ds/dd`.
    pub fn ds_dd(&self) -> f64 {
        self.s * LN_2
    }

    /// Chain factor `dg/dt`.
    pub fn dg_dt(&self) -> f64 {
        self.g * LN_2
    }

    /// Maps `dL/dQ(w)` to gradients on `(v, t, d)`.
    ///
    /// Rounding and the code clip are transparent (pure STE), so with `w` held
    /// fixed `dQ/ds = q - w/s`. The `min(g, T)` gate sends the gradient to `g`
    /// when `g <= T` and to `s` through `T` otherwise.
    pub fn backward(&self, grad_qw: &[f64]) -> ChannelGrad {
        let k = self.dir.len();
        debug_assert_eq!(grad_qw.len(), k);
        if self.degenerate {
            return ChannelGrad::zeros(k);
        }
        let mut grad_s = match self.mode {
            QuantMode::Quantize => grad_qw
                .iter()
                .zip(self.codes.iter().zip(&self.y))
                .map(|(gq, (c, y))| gq * (c - y))
                .sum(),
            QuantMode::Identity => 0.0,
        };
        if self.standard {
            return ChannelGrad {
                v: grad_qw.to_vec(),
                t: 0.0,
                d: grad_s * self.ds_dd(),
            };
        }
        let grad_norm: f64 = grad_qw.iter().zip(&self.dir).map(|(a, b)| a * b).sum();
        let mut grad_t = 0.0;
        if self.norm_clipped {
            grad_s += grad_norm * self.limit;
        } else {
            grad_t = grad_norm * self.dg_dt();
        }

        // dir = u / ||u||_1, so du_j = (gdir_j - sign(u_j) * <gdir, dir>) / ||u||_1
        let proj: f64 = grad_qw.iter().zip(&self.dir).map(|(a, b)| a * b).sum::<f64>() * self.norm;
        let mut grad_v: Vec<f64> = grad_qw
            .iter()
            .zip(&self.sign_u)
            .map(|(gq, su)| (gq * self.norm - su * proj) / self.l1_dir)
            .collect();
        if self.centered {
            let mean = grad_v.iter().sum::<f64>() / k as f64;
            grad_v.iter_mut().for_each(|x| *x -= mean);
        }
        ChannelGrad {
            v: grad_v,
            t: grad_t,
            d: grad_s * self.ds_dd(),
        }
    }
}

/// Quantizes one channel with an explicit integer-domain budget.
///
/// `centered` selects the zero-centered direction; channels shorter than
/// [`K_MIN_CENTER`] are quantized uncentered instead.
pub fn quantize_with_limit(
    ch: &ChannelWeights,
    limit: &RationalBound,
    weight_bits: u32,
    centered: bool,
    mode: QuantMode,
) -> Result<(QuantResult, BackwardTape)> {
    quantize_with_budget(ch, limit, limit.floor_f64(), weight_bits, centered, mode)
}

/// [`quantize_with_limit`] with `limit.floor_f64()` precomputed.
pub(crate) fn quantize_with_budget(
    ch: &ChannelWeights,
    limit: &RationalBound,
    limit_f: f64,
    weight_bits: u32,
    centered: bool,
    mode: QuantMode,
) -> Result<(QuantResult, BackwardTape)> {
    ch.validate()?;
    if !(2..=64).contains(&weight_bits) {
        return Err(Error::InvalidBitWidth(format!(
            "weight bits must lie in [2, 64], got {weight_bits}"
        )));
    }
    let k = ch.k();
    let centered = centered && k >= K_MIN_CENTER;
    let variant = if centered { Variant::A2QPlus } else { Variant::A2Q };
    let (n, p) = int_range(weight_bits, true);
    let s = ch.s();
    let g = ch.g();

    let u: Vec<f64> = if centered {
        // Centering twice: when the entries of `v` nearly agree, one pass
        // leaves a residual sum of order ulp(|v|), large against the tiny
        // centered entries. The second pass works at the scale of `u`.
        let mean = ch.v.iter().sum::<f64>() / k as f64;
        let u: Vec<f64> = ch.v.iter().map(|x| x - mean).collect();
        let residual = u.iter().sum::<f64>() / k as f64;
        u.iter().map(|x| x - residual).collect()
    } else {
        ch.v.clone()
    };
    let l1_dir: f64 = u.iter().map(|x| x.abs()).sum();
    let degenerate = !(l1_dir > 0.0) || u.iter().all(|&x| x == 0.0);

    let budget = s * limit_f;
    let norm_clipped = g > budget;
    let norm = if norm_clipped { budget } else { g };
    // w / s, computed from the integer-domain norm to keep the budget tight.
    let scaled_norm = if norm_clipped { limit_f } else { g / s };

    let (dir, sign_u) = if degenerate {
        (vec![0.0; k], vec![0.0; k])
    } else {
        (
            u.iter().map(|x| x / l1_dir).collect(),
            u.iter().map(|&x| sign(x)).collect(),
        )
    };
    let mut y: Vec<f64> = dir.iter().map(|d| d * scaled_norm).collect();
    let mut codes: Vec<i64> = Vec::with_capacity(k);
    for yi in y.iter_mut() {
        let r = yi.round();
        if r != 0.0 && (*yi - r).abs() <= SNAP_TOL * yi.abs().max(1.0) {
            *yi = r;
        }
        codes.push(yi.trunc() as i64);
    }
    let mut code_clipped = vec![false; k];
    for (c, clipped) in codes.iter_mut().zip(code_clipped.iter_mut()) {
        let cl = (*c).clamp(n, p);
        *clipped = cl != *c;
        *c = cl;
    }
    repair_l1(&mut codes, &y, limit);

    let w: Vec<f64> = y.iter().map(|yi| yi * s).collect();
    let qw = match mode {
        QuantMode::Quantize => codes.iter().map(|&c| s * c as f64).collect(),
        QuantMode::Identity => dir.iter().map(|d| d * norm).collect(),
    };
    let l1_codes: f64 = codes.iter().map(|&c| c.unsigned_abs() as f64).sum();
    let l1_exact = l1_int(&codes);
    let mut bound_satisfied = limit.admits_int(&l1_exact);
    if centered && !degenerate {
        let l1_y: f64 = y.iter().map(|v| v.abs()).sum();
        let sum_y: f64 = y.iter().sum();
        let tol = k as f64 * CENTER_TOL * l1_y.max(1.0);
        bound_satisfied &= sum_y.abs() <= tol && l1_y <= limit_f + tol;
    }

    let result = QuantResult {
        q: codes.clone(),
        qw,
        w,
        s,
        l1_codes,
        bound: Some(limit.clone()),
        bound_satisfied,
        variant,
    };
    let tape = BackwardTape {
        mode,
        standard: false,
        degenerate,
        centered,
        norm_clipped,
        code_clipped,
        l1_dir,
        dir,
        sign_u,
        norm,
        g,
        s,
        limit: limit_f,
        y,
        codes: codes.iter().map(|&c| c as f64).collect(),
    };
    Ok((result, tape))
}

fn l1_int(codes: &[i64]) -> BigInt {
    BigInt::from(codes.iter().map(|&c| u128::from(c.unsigned_abs())).sum::<u128>())
}

/// Floating-point noise can push a truncated code sum one unit over a budget
/// that sits just below an integer. Shrink the codes whose pre-round values
/// had the least fractional headroom until the exact check passes.
fn repair_l1(codes: &mut [i64], y: &[f64], limit: &RationalBound) {
    while !limit.admits_int(&l1_int(codes)) {
        let pick = codes
            .iter()
            .zip(y)
            .enumerate()
            .filter(|(_, (c, _))| **c != 0)
            .min_by(|(_, (ca, ya)), (_, (cb, yb))| {
                let ha = ya.abs() - ca.unsigned_abs() as f64;
                let hb = yb.abs() - cb.unsigned_abs() as f64;
                ha.total_cmp(&hb)
            })
            .map(|(i, _)| i);
        match pick {
            Some(i) => codes[i] -= codes[i].signum(),
            None => break,
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// The l1-constrained quantizer with the sign-dependent budget.
pub fn quantize_a2q(ch: &ChannelWeights, bits: &BitWidths) -> Result<QuantResult> {
    bits.validate()?;
    let limit = a2q_limit(bits)?;
    quantize_with_limit(ch, &limit, bits.weight_bits, false, QuantMode::Quantize).map(|(r, _)| r)
}

/// The zero-centered quantizer with the relaxed budget. Channels with
/// `K < K_MIN_CENTER` fall back to [`quantize_a2q`] (reported in `variant`).
pub fn quantize_a2q_plus(ch: &ChannelWeights, bits: &BitWidths) -> Result<QuantResult> {
    forward_weights(ch, Variant::A2QPlus, bits, QuantMode::Quantize).map(|(r, _)| r)
}

/// Forward pass of a weight quantizer plus the tape for its backward pass.
///
/// `Variant::Standard` treats `v` as the weights themselves (no norm
/// reparameterization, `t` unused) with round-half-to-even codes.
pub fn forward_weights(
    ch: &ChannelWeights,
    variant: Variant,
    bits: &BitWidths,
    mode: QuantMode,
) -> Result<(QuantResult, BackwardTape)> {
    bits.validate()?;
    match variant {
        Variant::A2Q => quantize_with_limit(ch, &a2q_limit(bits)?, bits.weight_bits, false, mode),
        Variant::A2QPlus => {
            if ch.k() < K_MIN_CENTER {
                quantize_with_limit(ch, &a2q_limit(bits)?, bits.weight_bits, false, mode)
            } else {
                quantize_with_limit(ch, &a2q_plus_limit(bits)?, bits.weight_bits, true, mode)
            }
        }
        Variant::Standard => forward_standard(ch, bits.weight_bits, mode),
    }
}

fn forward_standard(
    ch: &ChannelWeights,
    weight_bits: u32,
    mode: QuantMode,
) -> Result<(QuantResult, BackwardTape)> {
    ch.validate()?;
    let k = ch.k();
    let s = ch.s();
    let mut result = quantize_standard(&ch.v, &ActQuantSpec::symmetric(weight_bits, true, s))?;
    let y: Vec<f64> = ch.v.iter().map(|w| w / s).collect();
    let code_clipped = y
        .iter()
        .zip(&result.q)
        .map(|(yi, &c)| round_nearest(*yi) != c as f64)
        .collect();
    if mode == QuantMode::Identity {
        result.qw = ch.v.clone();
    }
    let tape = BackwardTape {
        mode,
        standard: true,
        degenerate: false,
        centered: false,
        norm_clipped: false,
        code_clipped,
        l1_dir: 1.0,
        dir: vec![0.0; k],
        sign_u: vec![0.0; k],
        norm: 1.0,
        g: 0.0,
        s,
        limit: 0.0,
        y,
        codes: result.q.iter().map(|&c| c as f64).collect(),
    };
    Ok((result, tape))
}
