//! The SE-Trans network.
//!
//! Two squeeze-and-excitation conv blocks, adaptive pooling of the time axis
//! to a short sequence of channel vectors, a stack of Transformer encoder
//! layers, max aggregation over time and a linear head producing logits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use setrans_autodiff::{cast, BatchNormMode, ParamId, ParamStore, RunningStats, Scalar, Tape, Tensor, Var};

use crate::matrix::Matrix;
use crate::task::Task;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_classes: usize,
    /// Frames and mel bands of one input example.
    pub input_frames: usize,
    pub input_bands: usize,
    pub channels: [usize; 2],
    pub reduction: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn: usize,
    /// Sequence length after adaptive pooling of the time axis.
    pub seq_len: usize,
    pub positional_encoding: bool,
}

impl ModelConfig {
    pub fn for_task(task: Task, n_classes: usize) -> Self {
        let features = task.feature_config();
        ModelConfig {
            n_classes,
            input_frames: task.input_frames(),
            input_bands: features.n_mels,
            channels: [64, 128],
            reduction: 16,
            heads: 8,
            layers: 1,
            ffn: 32,
            seq_len: 16,
            positional_encoding: false,
        }
    }

    /// Frames fed to the conv blocks: the input trimmed to a multiple of 4 so both 2x2 pools divide evenly.
    pub fn cropped_frames(&self) -> usize {
        self.input_frames - self.input_frames % 4
    }

    pub fn model_dim(&self) -> usize {
        self.channels[1]
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_classes == 0 {
            return fail("n_classes must be positive".into());
        }
        for c in self.channels {
            if c == 0 || self.reduction == 0 || c % self.reduction != 0 {
                return fail(format!("reduction {} must divide channel count {c}", self.reduction));
            }
        }
        if self.heads == 0 || !self.model_dim().is_multiple_of(self.heads) {
            return fail(format!("{} heads do not divide model width {}", self.heads, self.model_dim()));
        }
        if self.ffn == 0 || self.seq_len == 0 {
            return fail("ffn and seq_len must be positive".into());
        }
        if !self.input_bands.is_multiple_of(4) || self.input_bands == 0 {
            return fail(format!("input bands {} must be a positive multiple of 4", self.input_bands));
        }
        if self.cropped_frames() / 4 < self.seq_len {
            return fail(format!(
                "{} input frames pool to fewer than {} sequence steps",
                self.input_frames, self.seq_len
            ));
        }
        Ok(())
    }
}

/// Squeeze-and-excitation gate parameters; weights are `[in, out]`.
#[derive(Debug, Clone, Copy)]
pub struct SeVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Channel gating: global average, bottleneck ReLU, sigmoid, rescale.
/// Returns the gated tensor and the gate weights `[B, C]`.
pub fn se_layer<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &SeVars) -> Result<(Var, Var)> {
    let z = tape.mean_spatial(x)?;
    let h = tape.linear(z, p.w1, Some(p.b1))?;
    let h = tape.relu(h);
    let s = tape.linear(h, p.w2, Some(p.b2))?;
    let w = tape.sigmoid(s);
    Ok((tape.scale_channels(x, w)?, w))
}

/// Projections of multi-head self-attention; no biases.
#[derive(Debug, Clone, Copy)]
pub struct MhsaVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

/// Returns the projected attention output and the attention node, whose
/// probabilities are available through [`Tape::attention_probs`].
pub fn mhsa<T: Scalar>(tape: &mut Tape<T>, o: Var, p: &MhsaVars, heads: usize) -> Result<(Var, Var)> {
    let q = tape.linear(o, p.wq, None)?;
    let k = tape.linear(o, p.wk, None)?;
    let v = tape.linear(o, p.wv, None)?;
    let att = tape.attention(q, k, v, heads)?;
    Ok((tape.linear(att, p.wo, None)?, att))
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub attn: MhsaVars,
    pub ln1_gamma: Var,
    pub ln1_beta: Var,
    pub ffn_w1: Var,
    pub ffn_b1: Var,
    pub ffn_w2: Var,
    pub ffn_b2: Var,
    pub ln2_gamma: Var,
    pub ln2_beta: Var,
}

/// Post-norm encoder layer: `m = LN(o + MHSA(o))`, `LN(m + FFN(m))`.
pub fn encoder_layer<T: Scalar>(tape: &mut Tape<T>, o: Var, p: &EncoderVars, heads: usize) -> Result<(Var, Var)> {
    let (a, att) = mhsa(tape, o, &p.attn, heads)?;
    let r = tape.add(o, a)?;
    let m = tape.layer_norm(r, p.ln1_gamma, p.ln1_beta)?;
    let h = tape.linear(m, p.ffn_w1, Some(p.ffn_b1))?;
    let h = tape.relu(h);
    let f = tape.linear(h, p.ffn_w2, Some(p.ffn_b2))?;
    let r = tape.add(m, f)?;
    Ok((tape.layer_norm(r, p.ln2_gamma, p.ln2_beta)?, att))
}

#[derive(Debug, Clone, Copy)]
struct ConvIds {
    kernel: ParamId,
    bias: ParamId,
    gamma: ParamId,
    beta: ParamId,
    se: [ParamId; 4],
}

#[derive(Debug, Clone, Copy)]
struct EncoderIds {
    attn: [ParamId; 4],
    ln1: [ParamId; 2],
    ffn: [ParamId; 4],
    ln2: [ParamId; 2],
}

/// Parameter handles of the whole network, in declaration order.
#[derive(Debug, Clone)]
pub struct Network {
    config: ModelConfig,
    convs: [[ConvIds; 2]; 2],
    encoder: Vec<EncoderIds>,
    head: [ParamId; 2],
}

/// Values recorded by one forward pass that are worth inspecting.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub logits: Var,
    /// Gate weights `[B, C]` of every SE layer, block-major.
    pub se_weights: Vec<Var>,
    /// Attention nodes, one per encoder layer.
    pub attention: Vec<Var>,
    /// Output of the second SE block, `[B, C, T/4, F/4]`.
    pub block_output: Var,
    /// Encoder input `[B, seq_len, C]`.
    pub sequence: Var,
}

fn uniform<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Vec<f64> {
    let n: usize = shape.iter().product();
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

struct Builder<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Builder<'_, T> {
    fn add(&mut self, name: String, shape: &[usize], data: Vec<f64>) -> ParamId {
        let t = Tensor::from_f64(shape.to_vec(), &data).expect("parameter shape matches data");
        self.store.add(name, t)
    }

    /// Uniform in `+-sqrt(3 gain / fan_in)`; gain 2 ahead of a ReLU.
    fn weight(&mut self, name: String, shape: &[usize], fan_in: usize, gain: f64) -> ParamId {
        let bound = (3.0 * gain / fan_in as f64).sqrt();
        let data = uniform(shape, bound, &mut self.rng);
        self.add(name, shape, data)
    }

    fn constant(&mut self, name: String, shape: &[usize], value: f64) -> ParamId {
        let n = shape.iter().product();
        self.add(name, shape, vec![value; n])
    }
}

impl Network {
    /// Registers all parameters in `store`, initialized from `seed`.
    pub fn build<T: Scalar>(config: &ModelConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let conv = |b: &mut Builder<T>, prefix: String, cin: usize, c: usize, r: usize| ConvIds {
            kernel: b.weight(format!("{prefix}.conv.weight"), &[c, cin, 3, 3], cin * 9, 2.0),
            bias: b.constant(format!("{prefix}.conv.bias"), &[c], 0.0),
            gamma: b.constant(format!("{prefix}.bn.gamma"), &[c], 1.0),
            beta: b.constant(format!("{prefix}.bn.beta"), &[c], 0.0),
            se: [
                b.weight(format!("{prefix}.se.fc1.weight"), &[c, c / r], c, 2.0),
                b.constant(format!("{prefix}.se.fc1.bias"), &[c / r], 0.0),
                b.weight(format!("{prefix}.se.fc2.weight"), &[c / r, c], c / r, 1.0),
                b.constant(format!("{prefix}.se.fc2.bias"), &[c], 0.0),
            ],
        };
        let [c1, c2] = config.channels;
        let r = config.reduction;
        let convs = [
            [
                conv(&mut b, "block1.unit1".into(), 1, c1, r),
                conv(&mut b, "block1.unit2".into(), c1, c1, r),
            ],
            [
                conv(&mut b, "block2.unit1".into(), c1, c2, r),
                conv(&mut b, "block2.unit2".into(), c2, c2, r),
            ],
        ];
        let d = config.model_dim();
        let encoder = (0..config.layers)
            .map(|l| {
                let p = format!("encoder{l}");
                EncoderIds {
                    attn: ["query", "key", "value", "output"]
                        .map(|n| b.weight(format!("{p}.attn.{n}.weight"), &[d, d], d, 1.0)),
                    ln1: [
                        b.constant(format!("{p}.ln1.gamma"), &[d], 1.0),
                        b.constant(format!("{p}.ln1.beta"), &[d], 0.0),
                    ],
                    ffn: [
                        b.weight(format!("{p}.ffn.fc1.weight"), &[d, config.ffn], d, 2.0),
                        b.constant(format!("{p}.ffn.fc1.bias"), &[config.ffn], 0.0),
                        b.weight(format!("{p}.ffn.fc2.weight"), &[config.ffn, d], config.ffn, 1.0),
                        b.constant(format!("{p}.ffn.fc2.bias"), &[d], 0.0),
                    ],
                    ln2: [
                        b.constant(format!("{p}.ln2.gamma"), &[d], 1.0),
                        b.constant(format!("{p}.ln2.beta"), &[d], 0.0),
                    ],
                }
            })
            .collect();
        let head = [
            b.weight("head.weight".into(), &[d, config.n_classes], d, 1.0),
            b.constant("head.bias".into(), &[config.n_classes], 0.0),
        ];
        Ok(Network {
            config: config.clone(),
            convs,
            encoder,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Fresh running statistics for every batch-norm layer.
    pub fn new_stats<T: Scalar>(&self) -> Vec<RunningStats<T>> {
        let [c1, c2] = self.config.channels;
        vec![
            RunningStats::new(c1),
            RunningStats::new(c1),
            RunningStats::new(c2),
            RunningStats::new(c2),
        ]
    }

    /// Logits for an input var of shape `[B, 1, cropped_frames, bands]`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        stats: &mut [RunningStats<T>],
        input: Var,
        mode: BatchNormMode,
    ) -> Result<ForwardTrace> {
        let cfg = &self.config;
        let shape = tape.value(input).shape();
        let expect = [cfg.cropped_frames(), cfg.input_bands];
        if shape.len() != 4 || shape[1] != 1 || shape[2..] != expect {
            return Err(Error::Input(format!(
                "model input must be [B, 1, {}, {}], got {shape:?}",
                expect[0], expect[1]
            )));
        }
        if stats.len() != 4 {
            return Err(Error::Input(format!("expected 4 batch-norm statistics, got {}", stats.len())));
        }
        let mut x = input;
        let mut se_weights = Vec::with_capacity(4);
        for (bi, block) in self.convs.iter().enumerate() {
            for (ui, ids) in block.iter().enumerate() {
                let kernel = tape.param(store, ids.kernel);
                let bias = tape.param(store, ids.bias);
                let gamma = tape.param(store, ids.gamma);
                let beta = tape.param(store, ids.beta);
                let [w1, b1, w2, b2] = ids.se.map(|id| tape.param(store, id));
                let y = tape.conv2d(x, kernel, bias)?;
                let y = tape.batch_norm2d(y, gamma, beta, &mut stats[bi * 2 + ui], mode)?;
                let (y, w) = se_layer(tape, y, &SeVars { w1, b1, w2, b2 })?;
                se_weights.push(w);
                x = tape.relu(y);
            }
            x = tape.avg_pool2(x)?;
        }
        let block_output = x;
        let pooled = tape.adaptive_avg_pool(x, cfg.seq_len)?;
        let mut seq = tape.channels_to_sequence(pooled)?;
        if cfg.positional_encoding {
            let batch = tape.value(seq).shape()[0];
            let pe = positional_encoding::<T>(batch, cfg.seq_len, cfg.model_dim());
            let pe = tape.leaf(pe, false);
            seq = tape.add(seq, pe)?;
        }
        let sequence = seq;
        let mut attention = Vec::with_capacity(self.encoder.len());
        for ids in &self.encoder {
            let [wq, wk, wv, wo] = ids.attn.map(|id| tape.param(store, id));
            let [ln1_gamma, ln1_beta] = ids.ln1.map(|id| tape.param(store, id));
            let [ffn_w1, ffn_b1, ffn_w2, ffn_b2] = ids.ffn.map(|id| tape.param(store, id));
            let [ln2_gamma, ln2_beta] = ids.ln2.map(|id| tape.param(store, id));
            let vars = EncoderVars {
                attn: MhsaVars { wq, wk, wv, wo },
                ln1_gamma,
                ln1_beta,
                ffn_w1,
                ffn_b1,
                ffn_w2,
                ffn_b2,
                ln2_gamma,
                ln2_beta,
            };
            let (out, att) = encoder_layer(tape, seq, &vars, cfg.heads)?;
            attention.push(att);
            seq = out;
        }
        let pooled = tape.max_over_time(seq)?;
        let [hw, hb] = self.head.map(|id| tape.param(store, id));
        let logits = tape.linear(pooled, hw, Some(hb))?;
        Ok(ForwardTrace {
            logits,
            se_weights,
            attention,
            block_output,
            sequence,
        })
    }
}

/// Fixed sinusoidal position code `[B, T, C]`; only used when enabled in the config.
fn positional_encoding<T: Scalar>(batch: usize, len: usize, dim: usize) -> Tensor<T> {
    let mut one = Vec::with_capacity(len * dim);
    for t in 0..len {
        for i in 0..dim {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let a = t as f64 / rate;
            one.push(if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    let data: Vec<f64> = one.iter().copied().cycle().take(batch * len * dim).collect();
    Tensor::from_f64([batch, len, dim], &data).expect("positional code shape")
}

/// A network with its parameter values and batch-norm statistics.
#[derive(Debug, Clone)]
pub struct SETransModel<T: Scalar> {
    pub network: Network,
    pub params: ParamStore<T>,
    pub stats: Vec<RunningStats<T>>,
}

impl<T: Scalar> SETransModel<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let network = Network::build(config, &mut params, seed)?;
        let stats = network.new_stats();
        Ok(SETransModel {
            network,
            params,
            stats,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        self.network.config()
    }

    /// Total trainable scalars; running statistics are not counted.
    pub fn param_count(&self) -> usize {
        self.params.num_scalars()
    }

    /// Stacks spectrograms into a `[B, 1, frames, bands]` tensor, checking each
    /// against the input contract and trimming trailing frames to the cropped length.
    pub fn input_tensor(&self, examples: &[&Matrix]) -> Result<Tensor<T>> {
        input_tensor(self.config(), examples)
    }

    pub fn forward_train(&mut self, tape: &mut Tape<T>, input: Var) -> Result<ForwardTrace> {
        self.network
            .forward(tape, &self.params, &mut self.stats, input, BatchNormMode::Train)
    }

    pub fn forward_eval(&self, tape: &mut Tape<T>, input: Var) -> Result<ForwardTrace> {
        let mut stats = self.stats.clone();
        self.network
            .forward(tape, &self.params, &mut stats, input, BatchNormMode::Eval)
    }

    /// Eval-mode logits `[B, N]` for a batch of spectrograms.
    pub fn predict(&self, examples: &[&Matrix]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.leaf(self.input_tensor(examples)?, false);
        let trace = self.forward_eval(&mut tape, x)?;
        Ok(tape.value(trace.logits).clone())
    }

    /// Same parameters and statistics in another precision.
    pub fn cast<U: Scalar>(&self) -> SETransModel<U> {
        let mut params = ParamStore::new();
        for p in self.params.iter() {
            params.add(p.name.clone(), p.value.cast());
        }
        let conv = |v: &[T]| v.iter().map(|&x| cast::<U>(x.to_f64().expect("finite scalar"))).collect();
        SETransModel {
            network: self.network.clone(),
            params,
            stats: self
                .stats
                .iter()
                .map(|s| RunningStats {
                    mean: conv(&s.mean),
                    var: conv(&s.var),
                })
                .collect(),
        }
    }
}

pub fn input_tensor<T: Scalar>(config: &ModelConfig, examples: &[&Matrix]) -> Result<Tensor<T>> {
    if examples.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let (frames, bands) = (config.cropped_frames(), config.input_bands);
    let mut data = Vec::with_capacity(examples.len() * frames * bands);
    for (i, m) in examples.iter().enumerate() {
        if m.shape() != (config.input_frames, config.input_bands) {
            return Err(Error::Input(format!(
                "example {i} has shape {:?}, model expects ({}, {})",
                m.shape(),
                config.input_frames,
                config.input_bands
            )));
        }
        data.extend(m.data()[..frames * bands].iter().map(|&v| cast::<T>(v)));
    }
    Ok(Tensor::new([examples.len(), 1, frames, bands], data)?)
}
