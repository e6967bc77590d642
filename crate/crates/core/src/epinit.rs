//! Initialization of reparameterized channels from float checkpoints.
//!
//! The float weights are projected onto the l1 ball of the accumulator
//! budget (soft-thresholding with a sort-based threshold), so the quantizer
//! starts from the feasible point closest to the checkpoint instead of a
//! uniformly shrunk copy.

use serde::Serialize;

use crate::bounds::{a2q_limit, BitWidths};
use crate::error::{check_finite, check_same_len, Error, Result};
use crate::quantizers::{norm_exponent, ChannelWeights, Variant};

/// Scale used for all-zero channels.
pub const ZERO_CHANNEL_SCALE: f64 = 1.0 / (1u64 << 30) as f64;

/// Relative tolerance of the boundary equality `||v*||_1 = T`.
pub const BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionResult {
    pub v_star: Vec<f64>,
    pub theta: f64,
    /// False when the input already lay inside the ball.
    pub active: bool,
}

/// Euclidean projection of `w` onto `{v : ||v||_1 <= radius}`.
pub fn project_l1_ball(w: &[f64], radius: f64) -> Result<ProjectionResult> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::NonPositiveRadius(radius));
    }
    check_finite(w)?;
    let l1: f64 = w.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return Ok(ProjectionResult {
            v_star: w.to_vec(),
            theta: 0.0,
            active: false,
        });
    }

    let mut mags: Vec<f64> = w.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut prefix = 0.0;
    let mut theta = 0.0;
    for (j, &m) in mags.iter().enumerate() {
        prefix += m;
        let candidate = (prefix - radius) / (j + 1) as f64;
        if m - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    let mut v_star: Vec<f64> = w
        .iter()
        .map(|&x| x.signum() * (x.abs() - theta).max(0.0))
        .collect();
    // Prefix-sum rounding can leave the result a few ulps outside the ball.
    let norm: f64 = v_star.iter().map(|x| x.abs()).sum();
    if norm > radius {
        let shrink = radius / norm;
        v_star.iter_mut().for_each(|x| *x *= shrink);
    }
    Ok(ProjectionResult {
        v_star,
        theta,
        active: true,
    })
}

/// Per-channel scale from the largest float magnitude: `max|w| / (2^(M-1) - 1)`.
pub fn init_scale(w: &[f64], weight_bits: u32) -> Result<f64> {
    if !(2..=64).contains(&weight_bits) {
        return Err(Error::InvalidBitWidth(format!(
            "weight bits must lie in [2, 64], got {weight_bits}"
        )));
    }
    check_finite(w)?;
    let max = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return Ok(ZERO_CHANNEL_SCALE);
    }
    let p = ((1u128 << (weight_bits - 1)) - 1) as f64;
    Ok(max / p)
}

/// Initializes a channel by projecting `w_float` onto the l1 ball of radius
/// `s * a2q_limit`. Every variant uses this radius: a projection onto the
/// zero-centered ball is not implemented.
pub fn ep_init(w_float: &[f64], bits: &BitWidths, _variant: Variant) -> Result<ChannelWeights> {
    bits.validate()?;
    let s = init_scale(w_float, bits.weight_bits)?;
    let radius = s * a2q_limit(bits)?.floor_f64();
    ep_init_with_radius(w_float, s, radius)
}

/// [`ep_init`] with an explicit scale and radius.
pub fn ep_init_with_radius(w_float: &[f64], s: f64, radius: f64) -> Result<ChannelWeights> {
    let proj = project_l1_ball(w_float, radius)?;
    let g: f64 = proj.v_star.iter().map(|x| x.abs()).sum();
    Ok(ChannelWeights {
        v: proj.v_star,
        t: norm_exponent(g),
        d: s.log2(),
    })
}

/// `v = w_float`, `g = ||w_float||_1`.
pub fn naive_init(w_float: &[f64], s: f64) -> ChannelWeights {
    let g: f64 = w_float.iter().map(|x| x.abs()).sum();
    ChannelWeights {
        v: w_float.to_vec(),
        t: norm_exponent(g),
        d: s.log2(),
    }
}

/// `1/2 ||qw - w_float||^2`, optionally divided by `1/2 ||w_float||^2`
/// (with 0/0 taken as 0).
pub fn weight_quant_error(qw: &[f64], w_float: &[f64], normalized: bool) -> Result<f64> {
    check_same_len(qw.len(), w_float.len())?;
    let err: f64 = 0.5
        * qw.iter()
            .zip(w_float)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    if !normalized {
        return Ok(err);
    }
    let denom: f64 = 0.5 * w_float.iter().map(|x| x * x).sum::<f64>();
    if denom == 0.0 {
        return Ok(if err == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(err / denom)
}
