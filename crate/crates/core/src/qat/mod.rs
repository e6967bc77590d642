//! Quantization-aware training of a small fully-connected regressor.
//!
//! A float network is trained first on a teacher-student task; its weights
//! then initialize the quantized student (projection init for constrained
//! layers), which is fine-tuned with plain SGD through straight-through
//! estimators. Every step checks that each constrained channel's integer
//! weights satisfy their l1 budget, and training ends with an overflow
//! certificate from the integer simulator.

mod data;
mod network;

use std::cmp::Ordering;

use num::bigint::BigInt;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use data::{Dataset, DatasetSpec};
pub use network::{
    mse, FloatLayer, FloatNetwork, LayerGrad, LayerPolicy, NetGrad, ParamKind, QuantLayer,
    QuantizedWeights, ToyNetwork,
};

use crate::bounds::{a2q_limit, BitWidths, RationalBound};
use crate::epinit::{ep_init, init_scale, ZERO_CHANNEL_SCALE};
use crate::error::{Error, Result};
use crate::intsim::{
    check_accumulator, enum_budget_from_env, enumeration_size, exhaustive_check, AccumulatorSpec,
};
use crate::quantizers::{ChannelWeights, QuantMode, Variant, K_MIN_CENTER};

/// Bit widths of the unconstrained output layer.
pub const OUTPUT_LAYER_BITS: u32 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Weight, activation and accumulator widths of every hidden layer.
    pub bits: BitWidths,
    pub lr: f64,
    /// Applied to directions `v` only.
    pub weight_decay: f64,
    pub lambda_reg: f64,
    /// Quantization-aware epochs.
    pub epochs: usize,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub float_epochs: usize,
    pub float_lr: f64,
    /// Activation scales start at this quantile of the float activations
    /// divided by the largest code.
    pub calib_quantile: f64,
}

impl TrainConfig {
    /// The toy setup: two hidden layers of width 16 on the default dataset.
    pub fn new(variant: Variant, bits: BitWidths, seed: u64) -> Self {
        TrainConfig {
            variant,
            bits,
            lr: 0.004,
            weight_decay: 1e-4,
            lambda_reg: 1e-3,
            epochs: 20,
            seed,
            dataset: DatasetSpec::default(),
            hidden: vec![16, 16],
            batch_size: 256,
            float_epochs: 30,
            float_lr: 0.02,
            calib_quantile: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bits.validate()?;
        self.dataset.validate()?;
        if self.variant == Variant::Standard {
            return Err(Error::InvalidConfig(
                "training needs an accumulator-aware variant (a2q or a2q+)".into(),
            ));
        }
        if self.bits.act_signed {
            return Err(Error::InvalidConfig(
                "hidden activations follow a ReLU and are quantized unsigned".into(),
            ));
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.lr) || !positive(self.float_lr) {
            return Err(Error::InvalidConfig("learning rates must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) || !(self.lambda_reg >= 0.0) {
            return Err(Error::InvalidConfig("weight decay and lambda_reg must be >= 0".into()));
        }
        if self.batch_size == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("batch size and hidden widths must be positive".into()));
        }
        if !(self.calib_quantile > 0.0 && self.calib_quantile <= 1.0) {
            return Err(Error::InvalidConfig("calibration quantile must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn topology(&self) -> Vec<usize> {
        let mut t = vec![self.dataset.input_dim];
        t.extend(&self.hidden);
        t.push(1);
        t
    }
}

/// Budget enforced on a channel of length `k`, with the `K < 2` fallback.
pub(crate) fn effective_limit(k: usize, bits: &BitWidths, variant: Variant) -> Result<Option<RationalBound>> {
    if variant == Variant::A2QPlus && k < K_MIN_CENTER {
        return Variant::A2Q.limit(bits);
    }
    variant.limit(bits)
}

/// `max(g - T_eff, 0)` with `T_eff = s * limit`.
pub fn reg_penalty(ch: &ChannelWeights, bits: &BitWidths, variant: Variant) -> Result<f64> {
    Ok(match effective_limit(ch.k(), bits, variant)? {
        None => 0.0,
        Some(limit) => (ch.g() - ch.s() * limit.to_f64()).max(0.0),
    })
}

/// Gradient of [`reg_penalty`] with respect to `(t, d)`.
pub fn reg_penalty_grad(ch: &ChannelWeights, bits: &BitWidths, variant: Variant) -> Result<(f64, f64)> {
    let Some(limit) = effective_limit(ch.k(), bits, variant)? else {
        return Ok((0.0, 0.0));
    };
    let (g, s, l) = (ch.g(), ch.s(), limit.to_f64());
    if g > s * l {
        let ln2 = std::f64::consts::LN_2;
        Ok((g * ln2, -l * s * ln2))
    } else {
        Ok((0.0, 0.0))
    }
}

/// Fraction of zero integer codes over the hidden layers (every layer but
/// the output layer).
pub fn measure_sparsity(net: &ToyNetwork) -> Result<f64> {
    let qw = net.quantize(QuantMode::Quantize)?;
    Ok(sparsity_of(&qw))
}

fn sparsity_of(qw: &QuantizedWeights) -> f64 {
    let hidden = &qw.results[..qw.results.len().saturating_sub(1)];
    let (zeros, total) = hidden
        .iter()
        .flatten()
        .fold((0usize, 0usize), |(z, t), r| (z + r.zeros(), t + r.k()));
    if total == 0 {
        0.0
    } else {
        zeros as f64 / total as f64
    }
}

/// Feasibility CDF: for each `P`, the fraction of channels whose
/// `||w / s||_1` (with the max-magnitude init scale) fits the sign-dependent
/// budget at `(P, N)`.
pub fn channel_cdf(
    channels: &[Vec<f64>],
    weight_bits: u32,
    act_bits: u32,
    act_signed: bool,
    acc_widths: &[u32],
) -> Result<Vec<(u32, f64)>> {
    let norms = channels
        .iter()
        .map(|w| {
            let s = init_scale(w, weight_bits)?;
            Ok(w.iter().map(|x| (x / s).abs()).sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?;
    acc_widths
        .iter()
        .map(|&p| {
            let limit = a2q_limit(&BitWidths::new(weight_bits, act_bits, p, act_signed)?)?;
            let feasible = norms.iter().filter(|&&n| limit.admits_f64(n)).count();
            let frac = if norms.is_empty() { 1.0 } else { feasible as f64 / norms.len() as f64 };
            Ok((p, frac))
        })
        .collect()
}

/// One trained configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub variant: Variant,
    #[serde(rename = "M")]
    pub m: u32,
    #[serde(rename = "N")]
    pub n: u32,
    #[serde(rename = "P")]
    pub p: u32,
    pub seed: u64,
    pub final_loss: f64,
    pub sparsity: f64,
    /// Smallest `budget - ||q||_1` over all constrained channels.
    pub min_slack: RationalBound,
}

impl SweepRecord {
    pub const CSV_HEADER: &'static str = "variant,M,N,P,seed,final_loss,sparsity,min_slack";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.variant, self.m, self.n, self.p, self.seed, self.final_loss, self.sparsity, self.min_slack
        )
    }
}

/// Result of the post-training overflow checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverflowCertificate {
    /// Channels checked through the extremal inputs.
    pub channels: usize,
    /// Channels additionally checked by enumerating every input.
    pub exhaustive: usize,
    pub overflows: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub record: SweepRecord,
    pub float_loss: f64,
    pub certificate: OverflowCertificate,
    pub network: ToyNetwork,
    pub float_network: FloatNetwork,
}

/// Independent random streams derived from one seed.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const DATA_STREAM: u64 = 0;
const INIT_STREAM: u64 = 1;
const FLOAT_SHUFFLE_STREAM: u64 = 2;
const QAT_SHUFFLE_STREAM: u64 = 3;

/// Trains the float reference with SGD on the training split.
pub fn train_float(config: &TrainConfig, data: &Dataset) -> Result<FloatNetwork> {
    let mut net = FloatNetwork::random(&config.topology(), &mut stream(config.seed, INIT_STREAM))?;
    let mut rng = stream(config.seed, FLOAT_SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.x_train.len()).collect();
    for epoch in 0..config.float_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| data.x_train[i].as_slice()).collect();
            let ys: Vec<f64> = batch.iter().map(|&i| data.y_train[i]).collect();
            let loss = net.sgd_step(&xs, &ys, config.float_lr, config.weight_decay);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
        }
    }
    Ok(net)
}

fn quantile(mut xs: Vec<f64>, q: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let idx = ((xs.len() - 1) as f64 * q).round() as usize;
    xs[idx]
}

/// Builds the quantized student from a float checkpoint: projection init
/// for the hidden layers, max-magnitude scales for the output layer, and
/// activation scales calibrated on `calib` inputs.
pub fn init_from_float(
    float: &FloatNetwork,
    variant: Variant,
    bits: &BitWidths,
    calib: &[Vec<f64>],
    calib_quantile: f64,
) -> Result<ToyNetwork> {
    let nl = float.layers.len();
    let out_bits = BitWidths::new(OUTPUT_LAYER_BITS, OUTPUT_LAYER_BITS, 32, false)?;
    let mut inputs: Vec<Vec<f64>> = vec![Vec::new(); nl];
    for x in calib {
        for (l, a) in float.activations(x).into_iter().take(nl).enumerate() {
            inputs[l].extend(a);
        }
    }
    let mut layers = Vec::with_capacity(nl);
    for (l, fl) in float.layers.iter().enumerate() {
        let policy = if l + 1 < nl {
            LayerPolicy { variant, bits: *bits }
        } else {
            LayerPolicy {
                variant: Variant::Standard,
                bits: out_bits,
            }
        };
        let channels = fl
            .w
            .iter()
            .map(|row| {
                if policy.is_constrained() {
                    ep_init(row, bits, variant)
                } else {
                    let s = init_scale(row, out_bits.weight_bits)?;
                    Ok(ChannelWeights::new(row.clone(), 0.0, s.log2()))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let top = quantile(std::mem::take(&mut inputs[l]), calib_quantile);
        let levels = ((1u64 << policy.bits.act_bits) - 1) as f64;
        let s_a = if top > 0.0 { top / levels } else { ZERO_CHANNEL_SCALE };
        layers.push(QuantLayer {
            channels,
            bias: fl.b.clone(),
            act_d: s_a.log2(),
            policy,
        });
    }
    Ok(ToyNetwork { layers })
}

fn sgd_update(net: &mut ToyNetwork, grad: &NetGrad, config: &TrainConfig) {
    let flat = grad.flatten();
    let mut i = 0;
    net.for_each_param(|kind, p| {
        let decay = if kind == ParamKind::Direction { config.weight_decay * *p } else { 0.0 };
        *p -= config.lr * (flat[i] + decay);
        i += 1;
    });
}

/// Every constrained channel's exact slack; fails if any is negative.
fn check_bounds(net: &ToyNetwork, qw: &QuantizedWeights) -> Result<RationalBound> {
    let mut min: Option<RationalBound> = None;
    for (l, layer) in net.layers.iter().enumerate() {
        if !layer.policy.is_constrained() {
            continue;
        }
        for (o, r) in qw.results[l].iter().enumerate() {
            let slack = r.slack().ok_or_else(|| {
                Error::CertificateFailed(format!("layer {l} channel {o} has no budget"))
            })?;
            if !r.bound_satisfied || slack.is_negative() {
                return Err(Error::CertificateFailed(format!(
                    "layer {l} channel {o}: ||q||_1 = {} exceeds {}",
                    r.l1_exact(),
                    r.bound.as_ref().map(|b| b.to_string()).unwrap_or_default()
                )));
            }
            if min.as_ref().is_none_or(|m| slack < *m) {
                min = Some(slack);
            }
        }
    }
    min.ok_or_else(|| Error::CertificateFailed("no constrained layers".into()))
}

/// Extremal-input checks on every constrained channel, plus exhaustive
/// enumeration where it fits the budget.
pub fn certify(net: &ToyNetwork, qw: &QuantizedWeights, enum_budget: u128) -> Result<OverflowCertificate> {
    let mut cert = OverflowCertificate {
        channels: 0,
        exhaustive: 0,
        overflows: 0,
    };
    for (l, layer) in net.layers.iter().enumerate() {
        if !layer.policy.is_constrained() {
            continue;
        }
        let bits = &layer.policy.bits;
        let spec = AccumulatorSpec::new(bits.acc_bits)?;
        for r in &qw.results[l] {
            let mut overflowed = check_accumulator(&r.q, bits.act_bits, bits.act_signed, &spec)?.overflowed;
            cert.channels += 1;
            if enumeration_size(r.k(), bits.act_bits).is_some_and(|n| n <= enum_budget) {
                let e = exhaustive_check(&r.q, bits.act_bits, bits.act_signed, &spec, enum_budget)?;
                cert.exhaustive += 1;
                overflowed |= e.overflowed;
            }
            cert.overflows += usize::from(overflowed);
        }
    }
    Ok(cert)
}

/// The seed's dataset and float baseline. Both depend only on the seed, the
/// dataset spec and the float hyperparameters, so runs that differ only in
/// variant or bit widths can share them.
pub fn float_baseline(config: &TrainConfig) -> Result<(Dataset, FloatNetwork)> {
    config.validate()?;
    let data = Dataset::generate(&config.dataset, &mut stream(config.seed, DATA_STREAM))?;
    let float = train_float(config, &data)?;
    Ok((data, float))
}

/// Float pre-training followed by quantization-aware fine-tuning.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    let (data, float) = float_baseline(config)?;
    train_from(config, &data, float)
}

/// Quantization-aware fine-tuning from a float baseline produced by
/// [`float_baseline`] with the same config.
pub fn train_from(config: &TrainConfig, data: &Dataset, float: FloatNetwork) -> Result<TrainOutcome> {
    config.validate()?;
    let float_loss = float.loss(&data.x_test, &data.y_test);

    let mut net = init_from_float(&float, config.variant, &config.bits, &data.x_train, config.calib_quantile)?;
    let mut rng = stream(config.seed, QAT_SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.x_train.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| data.x_train[i].as_slice()).collect();
            let ys: Vec<f64> = batch.iter().map(|&i| data.y_train[i]).collect();
            let (loss, grad, qw) = net.loss_and_grad(&xs, &ys, QuantMode::Quantize, config.lambda_reg)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            check_bounds(&net, &qw)?;
            sgd_update(&mut net, &grad, config);
        }
    }

    let qw = net.quantize(QuantMode::Quantize)?;
    let min_slack = check_bounds(&net, &qw)?;
    let certificate = certify(&net, &qw, enum_budget_from_env())?;
    if certificate.overflows > 0 {
        return Err(Error::CertificateFailed(format!(
            "{} of {} channels can overflow",
            certificate.overflows, certificate.channels
        )));
    }
    let final_loss = net.loss(&data.x_test, &data.y_test, QuantMode::Quantize)?;
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            epoch: config.epochs,
            loss: final_loss,
        });
    }
    let record = SweepRecord {
        variant: config.variant,
        m: config.bits.weight_bits,
        n: config.bits.act_bits,
        p: config.bits.acc_bits,
        seed: config.seed,
        final_loss,
        sparsity: sparsity_of(&qw),
        min_slack,
    };
    Ok(TrainOutcome {
        record,
        float_loss,
        certificate,
        network: net,
        float_network: float,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatChannel {
    pub w: Vec<f64>,
}

/// `[[{v, t, d}, ...], ...]`.
pub fn checkpoint_json(net: &ToyNetwork) -> String {
    let layers: Vec<&Vec<ChannelWeights>> = net.layers.iter().map(|l| &l.channels).collect();
    serde_json::to_string(&layers).expect("channels serialize")
}

/// `[[{w}, ...], ...]`.
pub fn float_checkpoint_json(net: &FloatNetwork) -> String {
    let layers: Vec<Vec<FloatChannel>> = net
        .layers
        .iter()
        .map(|l| l.w.iter().map(|w| FloatChannel { w: w.clone() }).collect())
        .collect();
    serde_json::to_string(&layers).expect("channels serialize")
}

pub fn parse_checkpoint(json: &str) -> Result<Vec<Vec<ChannelWeights>>> {
    serde_json::from_str(json).map_err(|e| Error::Parse(e.to_string()))
}

pub fn parse_float_checkpoint(json: &str) -> Result<Vec<Vec<FloatChannel>>> {
    serde_json::from_str(json).map_err(|e| Error::Parse(e.to_string()))
}

/// Outcome of one finite-difference gradient check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub params: usize,
    pub max_rel_err: f64,
    /// Draws rejected for lying too close to a kink.
    pub resamples: usize,
}

/// Step of the central differences.
pub const GRAD_CHECK_STEP: f64 = 1e-4;
/// Minimum distance to any kink (ReLU, norm gate, sign of a direction entry)
/// for a draw to be used.
const KINK_MARGIN: f64 = 1e-2;

/// `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn random_check_net<R: Rng>(rng: &mut R, variant: Variant) -> Result<ToyNetwork> {
    let topology = [6usize, 5, 4, 1];
    let bits = BitWidths::new(4, 4, 10, false)?;
    let out_bits = BitWidths::new(OUTPUT_LAYER_BITS, OUTPUT_LAYER_BITS, 32, false)?;
    let nl = topology.len() - 1;
    let mut layers = Vec::new();
    for l in 0..nl {
        let (k, c) = (topology[l], topology[l + 1]);
        let policy = if l + 1 < nl {
            LayerPolicy { variant, bits }
        } else {
            LayerPolicy {
                variant: Variant::Standard,
                bits: out_bits,
            }
        };
        let channels = (0..c)
            .map(|_| {
                let v: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
                ChannelWeights::new(v, rng.random_range(-1.0..3.0), rng.random_range(-5.0..-3.0))
            })
            .collect();
        layers.push(QuantLayer {
            channels,
            bias: (0..c).map(|_| rng.random_range(-0.5..0.5)).collect(),
            act_d: rng.random_range(-4.0..-2.0),
            policy,
        });
    }
    Ok(ToyNetwork { layers })
}

/// Smallest distance of the draw to a non-differentiable point, relative
/// where that is the natural scale.
fn kink_distance(net: &ToyNetwork, xs: &[&[f64]]) -> Result<f64> {
    let mut dist = f64::INFINITY;
    for layer in net.layers.iter().filter(|l| l.policy.is_constrained()) {
        for ch in &layer.channels {
            let centered = layer.policy.variant == Variant::A2QPlus && ch.k() >= K_MIN_CENTER;
            let mean = if centered { ch.v.iter().sum::<f64>() / ch.k() as f64 } else { 0.0 };
            for v in &ch.v {
                dist = dist.min((v - mean).abs());
            }
            if let Some(limit) = effective_limit(ch.k(), &layer.policy.bits, layer.policy.variant)? {
                let t_eff = ch.s() * limit.to_f64();
                dist = dist.min((ch.g() - t_eff).abs() / t_eff);
            }
        }
    }
    let qw = net.quantize(QuantMode::Identity)?;
    let nl = net.layers.len();
    for x in xs {
        let mut a = x.to_vec();
        for l in 0..nl - 1 {
            let z: Vec<f64> = qw.results[l]
                .iter()
                .zip(&net.layers[l].bias)
                .map(|(r, b)| r.qw.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>() + b)
                .collect();
            for zi in &z {
                dist = dist.min(zi.abs());
            }
            a = z.iter().map(|v| v.max(0.0)).collect();
        }
    }
    Ok(dist)
}

/// Compares the manual backward pass, with both quantizers replaced by the
/// identity, against central differences on every parameter of a small
/// random network.
pub fn gradient_check(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let variant = if seed % 2 == 0 { Variant::A2Q } else { Variant::A2QPlus };
    let lambda = 0.1;
    let mut resamples = 0;
    let (mut net, xs, ys) = loop {
        let net = random_check_net(&mut rng, variant)?;
        let xs: Vec<Vec<f64>> = (0..6).map(|_| (0..6).map(|_| rng.random_range(0.0..2.0)).collect()).collect();
        let ys: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        if kink_distance(&net, &refs)? > KINK_MARGIN {
            break (net, xs, ys);
        }
        resamples += 1;
        if resamples > 1000 {
            return Err(Error::Infeasible("no kink-free draw found".into()));
        }
    };
    let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
    let (_, grad, _) = net.loss_and_grad(&refs, &ys, QuantMode::Identity, lambda)?;
    let analytic = grad.flatten();
    let params = net.param_vector();
    let mut max_rel_err: f64 = 0.0;
    for (i, (&p, &a)) in params.iter().zip(&analytic).enumerate() {
        let mut eval = |value: f64| -> Result<f64> {
            let mut j = 0;
            net.for_each_param(|_, q| {
                if j == i {
                    *q = value;
                }
                j += 1;
            });
            Ok(net.loss_and_grad(&refs, &ys, QuantMode::Identity, lambda)?.0)
        };
        let fd = (eval(p + GRAD_CHECK_STEP)? - eval(p - GRAD_CHECK_STEP)?) / (2.0 * GRAD_CHECK_STEP);
        eval(p)?;
        max_rel_err = max_rel_err.max(rel_err(a, fd));
    }
    Ok(GradCheckReport {
        seed,
        params: params.len(),
        max_rel_err,
        resamples,
    })
}

/// Human-readable summary of a run.
pub fn describe(outcome: &TrainOutcome) -> String {
    let r = &outcome.record;
    format!(
        "{} M={} N={} P={} seed={}: loss {:.6} (float {:.6}), sparsity {:.4}, min slack {} ({} channels certified, {} exhaustively)",
        r.variant,
        r.m,
        r.n,
        r.p,
        r.seed,
        r.final_loss,
        outcome.float_loss,
        r.sparsity,
        r.min_slack,
        outcome.certificate.channels,
        outcome.certificate.exhaustive
    )
}

/// Orders records by `(variant, M, N, P, seed)`.
pub fn record_order(a: &SweepRecord, b: &SweepRecord) -> Ordering {
    (a.variant, a.m, a.n, a.p, a.seed).cmp(&(b.variant, b.m, b.n, b.p, b.seed))
}

/// Exact `||q||_1` for every constrained channel of a trained network.
pub fn channel_l1_norms(net: &ToyNetwork) -> Result<Vec<Vec<BigInt>>> {
    let qw = net.quantize(QuantMode::Quantize)?;
    Ok(net
        .layers
        .iter()
        .zip(&qw.results)
        .filter(|(l, _)| l.policy.is_constrained())
        .map(|(_, rs)| rs.iter().map(|r| r.l1_exact()).collect())
        .collect())
}
