//! Fully-connected ReLU networks: a float reference and the quantized
//! student, both with hand-written backpropagation.

use std::f64::consts::LN_2;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bounds::BitWidths;
use crate::error::{check_same_len, Error, Result};
use crate::quantizers::{
    forward_weights, quantize_with_budget, round_nearest, ActQuantSpec, BackwardTape, ChannelGrad, ChannelWeights,
    QuantMode, QuantResult, Variant,
};

/// Mean squared error.
pub fn mse(pred: &[f64], target: &[f64]) -> f64 {
    let n = pred.len().max(1) as f64;
    pred.iter().zip(target).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / n
}

/// Eight independent partial sums so the reduction pipelines.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    acc.iter().sum::<f64>() + tail
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatLayer {
    /// `w[out][in]`.
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// Unquantized MLP with ReLU between layers and a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatNetwork {
    pub layers: Vec<FloatLayer>,
}

impl FloatNetwork {
    /// He-normal weights, zero biases.
    pub fn random<R: Rng>(topology: &[usize], rng: &mut R) -> Result<Self> {
        if topology.len() < 2 || topology.contains(&0) {
            return Err(Error::InvalidConfig(format!("bad topology {topology:?}")));
        }
        let layers = topology
            .windows(2)
            .map(|io| {
                let std = (2.0 / io[0] as f64).sqrt();
                FloatLayer {
                    w: (0..io[1])
                        .map(|_| (0..io[0]).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect())
                        .collect(),
                    b: vec![0.0; io[1]],
                }
            })
            .collect();
        Ok(FloatNetwork { layers })
    }

    pub fn topology(&self) -> Vec<usize> {
        let mut t = vec![self.layers[0].w[0].len()];
        t.extend(self.layers.iter().map(|l| l.b.len()));
        t
    }

    /// Inputs of every layer followed by the output.
    pub fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let last = self.layers.len() - 1;
        let mut acts = vec![x.to_vec()];
        for (l, layer) in self.layers.iter().enumerate() {
            let a = acts.last().unwrap();
            let z: Vec<f64> = layer
                .w
                .iter()
                .zip(&layer.b)
                .map(|(row, b)| {
                    let z = dot(row, a) + b;
                    if l < last {
                        z.max(0.0)
                    } else {
                        z
                    }
                })
                .collect();
            acts.push(z);
        }
        acts
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.activations(x).last().unwrap()[0]
    }

    pub fn loss(&self, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
        let pred: Vec<f64> = xs.iter().map(|x| self.predict(x)).collect();
        mse(&pred, ys)
    }

    /// One SGD step on the mean squared error of the batch; returns the
    /// batch loss before the step.
    pub fn sgd_step(&mut self, xs: &[&[f64]], ys: &[f64], lr: f64, weight_decay: f64) -> f64 {
        let n = xs.len() as f64;
        let mut gw: Vec<Vec<Vec<f64>>> = self
            .layers
            .iter()
            .map(|l| vec![vec![0.0; l.w[0].len()]; l.w.len()])
            .collect();
        let mut gb: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.b.len()]).collect();
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let acts = self.activations(x);
            let out = acts.last().unwrap()[0];
            loss += (out - y) * (out - y) / n;
            let mut dz = vec![2.0 * (out - y) / n];
            for l in (0..self.layers.len()).rev() {
                let input = &acts[l];
                for (o, &g) in dz.iter().enumerate() {
                    gb[l][o] += g;
                    for (gwi, ai) in gw[l][o].iter_mut().zip(input) {
                        *gwi += g * ai;
                    }
                }
                if l > 0 {
                    let w = &self.layers[l].w;
                    dz = (0..input.len())
                        .map(|i| {
                            if input[i] > 0.0 {
                                dz.iter().zip(w).map(|(g, row)| g * row[i]).sum()
                            } else {
                                0.0
                            }
                        })
                        .collect();
                }
            }
        }
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (row, grow) in layer.w.iter_mut().zip(&gw[l]) {
                for (w, g) in row.iter_mut().zip(grow) {
                    *w -= lr * (g + weight_decay * *w);
                }
            }
            for (b, g) in layer.b.iter_mut().zip(&gb[l]) {
                *b -= lr * g;
            }
        }
        loss
    }
}

/// Weight quantizer and input activation width of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerPolicy {
    /// `Standard` for unconstrained layers.
    pub variant: Variant,
    pub bits: BitWidths,
}

impl LayerPolicy {
    pub fn is_constrained(&self) -> bool {
        self.variant != Variant::Standard
    }
}

/// One quantized layer: per-output-unit channels, float biases and the
/// log2 scale of the unsigned input activation quantizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantLayer {
    pub channels: Vec<ChannelWeights>,
    pub bias: Vec<f64>,
    pub act_d: f64,
    pub policy: LayerPolicy,
}

impl QuantLayer {
    pub fn act_spec(&self) -> ActQuantSpec {
        ActQuantSpec::symmetric(self.policy.bits.act_bits, false, self.act_d.exp2())
    }
}

/// The quantized student network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyNetwork {
    pub layers: Vec<QuantLayer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub channels: Vec<ChannelGrad>,
    pub bias: Vec<f64>,
    pub act_d: f64,
}

/// Gradients in the same layout as [`ToyNetwork`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrad {
    pub layers: Vec<LayerGrad>,
}

/// Quantized weights of every layer with their backward tapes.
pub struct QuantizedWeights {
    pub results: Vec<Vec<QuantResult>>,
    pub tapes: Vec<Vec<BackwardTape>>,
}

/// Per-sample forward record of one layer's input quantizer.
struct ActRecord {
    /// Quantized input `s_a * c`.
    aq: Vec<f64>,
    /// `a / s_a`.
    y: Vec<f64>,
    c: Vec<f64>,
}

fn quantize_act(a: &[f64], spec: &ActQuantSpec, mode: QuantMode) -> ActRecord {
    match mode {
        QuantMode::Identity => ActRecord {
            aq: a.to_vec(),
            y: Vec::new(),
            c: Vec::new(),
        },
        QuantMode::Quantize => {
            let (lo, hi) = spec.range();
            let (lo, hi) = (lo as f64, hi as f64);
            let y: Vec<f64> = a.iter().map(|x| x / spec.scale).collect();
            let c: Vec<f64> = y.iter().map(|&v| round_nearest(v).clamp(lo, hi)).collect();
            let aq = c.iter().map(|v| v * spec.scale).collect();
            ActRecord { aq, y, c }
        }
    }
}

impl ToyNetwork {
    pub fn topology(&self) -> Vec<usize> {
        let mut t = vec![self.layers[0].channels[0].k()];
        t.extend(self.layers.iter().map(|l| l.channels.len()));
        t
    }

    pub fn quantize(&self, mode: QuantMode) -> Result<QuantizedWeights> {
        let mut results = Vec::with_capacity(self.layers.len());
        let mut tapes = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut rs = Vec::with_capacity(layer.channels.len());
            let mut ts = Vec::with_capacity(layer.channels.len());
            let (variant, bits) = (layer.policy.variant, &layer.policy.bits);
            // Channels of a layer share K, so the budget is computed once.
            let limit = match variant {
                Variant::Standard => None,
                _ => super::effective_limit(layer.channels[0].k(), bits, variant)?.map(|l| {
                    let f = l.floor_f64();
                    (l, f)
                }),
            };
            for ch in &layer.channels {
                let (r, t) = match &limit {
                    Some((l, f)) => {
                        quantize_with_budget(ch, l, *f, bits.weight_bits, variant == Variant::A2QPlus, mode)?
                    }
                    None => forward_weights(ch, variant, bits, mode)?,
                };
                rs.push(r);
                ts.push(t);
            }
            results.push(rs);
            tapes.push(ts);
        }
        Ok(QuantizedWeights { results, tapes })
    }

    fn forward_one(&self, qw: &QuantizedWeights, x: &[f64], mode: QuantMode) -> (Vec<ActRecord>, Vec<Vec<f64>>) {
        let last = self.layers.len() - 1;
        let mut records = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let rec = quantize_act(&a, &layer.act_spec(), mode);
            let z: Vec<f64> = qw.results[l]
                .iter()
                .zip(&layer.bias)
                .map(|(r, b)| dot(&r.qw, &rec.aq) + b)
                .collect();
            a = if l < last { z.iter().map(|v| v.max(0.0)).collect() } else { z.clone() };
            records.push(rec);
            pre.push(z);
        }
        (records, pre)
    }

    pub fn predict_with(&self, qw: &QuantizedWeights, x: &[f64], mode: QuantMode) -> f64 {
        self.forward_one(qw, x, mode).1.last().unwrap()[0]
    }

    /// Test-time mean squared error with quantized weights and activations.
    pub fn loss(&self, xs: &[Vec<f64>], ys: &[f64], mode: QuantMode) -> Result<f64> {
        check_same_len(xs.len(), ys.len())?;
        let qw = self.quantize(mode)?;
        let pred: Vec<f64> = xs.iter().map(|x| self.predict_with(&qw, x, mode)).collect();
        Ok(mse(&pred, ys))
    }

    /// `sum_l sum_i max(g - T_eff, 0)` over constrained layers.
    pub fn reg_total(&self) -> Result<f64> {
        let mut total = 0.0;
        for layer in self.layers.iter().filter(|l| l.policy.is_constrained()) {
            for ch in &layer.channels {
                total += super::reg_penalty(ch, &layer.policy.bits, layer.policy.variant)?;
            }
        }
        Ok(total)
    }

    /// Batch loss `mse + lambda * reg` and its gradient with respect to every
    /// parameter. Also returns the quantized weights used in the forward pass.
    pub fn loss_and_grad(
        &self,
        xs: &[&[f64]],
        ys: &[f64],
        mode: QuantMode,
        lambda_reg: f64,
    ) -> Result<(f64, NetGrad, QuantizedWeights)> {
        check_same_len(xs.len(), ys.len())?;
        let qw = self.quantize(mode)?;
        let n = xs.len() as f64;
        let nl = self.layers.len();
        let mut grad_qw: Vec<Vec<Vec<f64>>> = self
            .layers
            .iter()
            .map(|l| vec![vec![0.0; l.channels[0].k()]; l.channels.len()])
            .collect();
        let mut grad_b: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect();
        let mut grad_sa = vec![0.0; nl];
        let mut loss = 0.0;

        for (x, &target) in xs.iter().zip(ys) {
            let (records, pre) = self.forward_one(&qw, x, mode);
            let out = pre[nl - 1][0];
            loss += (out - target) * (out - target) / n;
            let mut dz = vec![2.0 * (out - target) / n];
            for l in (0..nl).rev() {
                let rec = &records[l];
                let k = rec.aq.len();
                let mut daq = vec![0.0; k];
                for (o, &g) in dz.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    grad_b[l][o] += g;
                    let qrow = &qw.results[l][o].qw;
                    for ((gq, d), (&a, &q)) in grad_qw[l][o].iter_mut().zip(daq.iter_mut()).zip(rec.aq.iter().zip(qrow)) {
                        *gq += g * a;
                        *d += g * q;
                    }
                }
                // Clipped STE on the input quantizer, LSQ-style scale gradient.
                let mut da = daq;
                if mode == QuantMode::Quantize {
                    let hi = self.layers[l].act_spec().range().1 as f64;
                    for i in 0..k {
                        let inside = rec.y[i] >= 0.0 && rec.y[i] <= hi;
                        grad_sa[l] += da[i] * if inside { rec.c[i] - rec.y[i] } else { rec.c[i] };
                        if !inside {
                            da[i] = 0.0;
                        }
                    }
                }
                if l > 0 {
                    let z_prev = &pre[l - 1];
                    dz = da
                        .iter()
                        .zip(z_prev)
                        .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
                        .collect();
                }
            }
        }

        let mut layers = Vec::with_capacity(nl);
        for (l, layer) in self.layers.iter().enumerate() {
            let mut channels = Vec::with_capacity(layer.channels.len());
            for (o, ch) in layer.channels.iter().enumerate() {
                let mut g = qw.tapes[l][o].backward(&grad_qw[l][o]);
                if layer.policy.is_constrained() && lambda_reg > 0.0 {
                    let (rt, rd) = super::reg_penalty_grad(ch, &layer.policy.bits, layer.policy.variant)?;
                    g.t += lambda_reg * rt;
                    g.d += lambda_reg * rd;
                }
                channels.push(g);
            }
            layers.push(LayerGrad {
                channels,
                bias: grad_b[l].clone(),
                act_d: grad_sa[l] * layer.act_d.exp2() * LN_2,
            });
        }
        let total = loss + lambda_reg * self.reg_total()?;
        Ok((total, NetGrad { layers }, qw))
    }

    /// Visits every trainable scalar in a fixed order.
    pub fn for_each_param(&mut self, mut f: impl FnMut(ParamKind, &mut f64)) {
        for layer in &mut self.layers {
            for ch in &mut layer.channels {
                ch.v.iter_mut().for_each(|v| f(ParamKind::Direction, v));
                f(ParamKind::NormExponent, &mut ch.t);
                f(ParamKind::ScaleExponent, &mut ch.d);
            }
            layer.bias.iter_mut().for_each(|b| f(ParamKind::Bias, b));
            f(ParamKind::ActScaleExponent, &mut layer.act_d);
        }
    }

    pub fn param_vector(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.for_each_param(|_, p| out.push(*p));
        out
    }
}

impl NetGrad {
    /// Gradient entries in the order of [`ToyNetwork::for_each_param`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for ch in &layer.channels {
                out.extend(&ch.v);
                out.push(ch.t);
                out.push(ch.d);
            }
            out.extend(&layer.bias);
            out.push(layer.act_d);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Direction,
    NormExponent,
    ScaleExponent,
    Bias,
    ActScaleExponent,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn float_backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = FloatNetwork::random(&[3, 4, 1], &mut rng).unwrap();
        let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.random_range(0.0..2.0)).collect()).collect();
        let ys = vec![0.3, -0.2, 1.0, 0.0];
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();

        // lr = 1 turns the update into the negated gradient.
        let mut stepped = net.clone();
        stepped.sgd_step(&refs, &ys, 1.0, 0.0);
        let h = 1e-6;
        for (l, o, i) in [(0, 0, 0), (0, 2, 1), (1, 0, 3)] {
            let mut plus = net.clone();
            plus.layers[l].w[o][i] += h;
            let mut minus = net.clone();
            minus.layers[l].w[o][i] -= h;
            let fd = (plus.loss(&xs, &ys) - minus.loss(&xs, &ys)) / (2.0 * h);
            let analytic = net.layers[l].w[o][i] - stepped.layers[l].w[o][i];
            assert!((fd - analytic).abs() < 1e-6, "{fd} vs {analytic}");
        }
    }

    #[test]
    fn act_quantizer_rounds_and_clips() {
        let spec = ActQuantSpec::symmetric(2, false, 0.5);
        let r = quantize_act(&[0.2, 0.26, 0.75, 5.0], &spec, QuantMode::Quantize);
        assert_eq!(r.c, vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(r.aq, vec![0.0, 0.5, 1.0, 1.5]);
        let r = quantize_act(&[0.2, 5.0], &spec, QuantMode::Identity);
        assert_eq!(r.aq, vec![0.2, 5.0]);
    }

    #[test]
    fn mse_example() {
        assert_eq!(mse(&[1.0, 2.0], &[0.0, 0.0]), 2.5);
    }
}
