use crate::ops::{activation, attention, conv, linear, loss, norm, pool};
use crate::{cast, ParamId, ParamStore, Result, Scalar, Tensor, TensorError};

/// Discrete branch decisions of a recorded forward pass; see [`Tape::branch_pattern`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BranchPattern {
    pub relu: Vec<bool>,
    pub argmax: Vec<usize>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchNormMode {
    Train,
    Eval,
}

/// Running mean / variance of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf {
        param: Option<ParamId>,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    LayerNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    AvgPool2(Var),
    AdaptiveAvgPool {
        input: Var,
        bins: usize,
    },
    MeanSpatial(Var),
    ScaleChannels {
        input: Var,
        weights: Var,
    },
    ChannelsToSequence(Var),
    MaxOverTime {
        input: Var,
        argmax: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Tensor<T>,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Tensor<T>,
    },
    BinaryCrossEntropy {
        logits: Var,
        targets: Tensor<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

/// Record of primitive applications in execution order.
///
/// Node ids are assigned in creation order, so every input id precedes the id
/// of the node that consumes it and a reverse sweep is a topological order.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar with respect to the tracked leaves of a tape.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].tracked
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn any_tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    /// Records an input tensor. Gradients are kept for it when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf { param: None }, requires_grad)
    }

    /// Records a trainable parameter; its gradient can be accumulated back
    /// into the store with [`Tape::backward_into`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(
            store.value(id).clone(),
            Op::Leaf { param: Some(id) },
            true,
        )
    }

    /// 3x3 convolution with zero padding 1 (shape preserving).
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let out = conv::conv2d(self.value(input), self.value(kernel), self.value(bias))?;
        let tracked = self.any_tracked(&[input, kernel, bias]);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
            },
            tracked,
        ))
    }

    /// Per-channel batch normalization of a `[B, C, H, W]` tensor.
    ///
    /// In train mode batch statistics are used and `stats` is updated with
    /// momentum [`crate::BN_MOMENTUM`]; in eval mode `stats` is read only.
    pub fn batch_norm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        mode: BatchNormMode,
    ) -> Result<Var> {
        let eps = cast(crate::NORM_EPS);
        let (out, mean, inv_std) = match mode {
            BatchNormMode::Train => {
                let r = norm::batch_norm_train(
                    self.value(input),
                    self.value(gamma),
                    self.value(beta),
                    eps,
                )?;
                let momentum: T = cast(crate::BN_MOMENTUM);
                for c in 0..r.mean.len() {
                    stats.mean[c] = (T::one() - momentum) * stats.mean[c] + momentum * r.mean[c];
                    stats.var[c] =
                        (T::one() - momentum) * stats.var[c] + momentum * r.unbiased_var[c];
                }
                (r.output, r.mean, r.inv_std)
            }
            BatchNormMode::Eval => {
                let inv_std: Vec<T> = stats.var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                let out = norm::batch_norm_apply(
                    self.value(input),
                    self.value(gamma),
                    self.value(beta),
                    &stats.mean,
                    &inv_std,
                )?;
                (out, stats.mean.clone(), inv_std)
            }
        };
        let tracked = self.any_tracked(&[input, gamma, beta]);
        Ok(self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
                train: mode == BatchNormMode::Train,
            },
            tracked,
        ))
    }

    /// Normalizes over the last axis, eps [`crate::NORM_EPS`].
    pub fn layer_norm(&mut self, input: Var, gamma: Var, beta: Var) -> Result<Var> {
        let r = norm::layer_norm(
            self.value(input),
            self.value(gamma),
            self.value(beta),
            cast(crate::NORM_EPS),
        )?;
        let tracked = self.any_tracked(&[input, gamma, beta]);
        Ok(self.push(
            r.output,
            Op::LayerNorm {
                input,
                gamma,
                beta,
                mean: r.mean,
                inv_std: r.inv_std,
            },
            tracked,
        ))
    }

    /// `input[..., din] x weight[din, dout] + bias[dout]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let out = linear::linear(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
        )?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let tracked = self.any_tracked(&deps);
        Ok(self.push(
            out,
            Op::Linear {
                input,
                weight,
                bias,
            },
            tracked,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = activation::relu(self.value(x));
        let tracked = self.any_tracked(&[x]);
        self.push(out, Op::Relu(x), tracked)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = activation::sigmoid(self.value(x));
        let tracked = self.any_tracked(&[x]);
        self.push(out, Op::Sigmoid(x), tracked)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let out = activation::softmax_last(self.value(x));
        let tracked = self.any_tracked(&[x]);
        self.push(out, Op::Softmax(x), tracked)
    }

    /// 2x2 average pooling with stride 2; both spatial dims must be even.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let out = pool::avg_pool2(self.value(x))?;
        let tracked = self.any_tracked(&[x]);
        Ok(self.push(out, Op::AvgPool2(x), tracked))
    }

    /// `[B, C, H, W] -> [B, C, bins, 1]`: contiguous time bins, frequency
    /// fully averaged.
    pub fn adaptive_avg_pool(&mut self, x: Var, bins: usize) -> Result<Var> {
        let out = pool::adaptive_avg_pool(self.value(x), bins)?;
        let tracked = self.any_tracked(&[x]);
        Ok(self.push(out, Op::AdaptiveAvgPool { input: x, bins }, tracked))
    }

    /// `[B, C, H, W] -> [B, C]` global average.
    pub fn mean_spatial(&mut self, x: Var) -> Result<Var> {
        let out = pool::mean_spatial(self.value(x))?;
        let tracked = self.any_tracked(&[x]);
        Ok(self.push(out, Op::MeanSpatial(x), tracked))
    }

    /// Multiplies channel `c` of a `[B, C, H, W]` map by `weights[b, c]`.
    pub fn scale_channels(&mut self, x: Var, weights: Var) -> Result<Var> {
        let out = activation::scale_channels(self.value(x), self.value(weights))?;
        let tracked = self.any_tracked(&[x, weights]);
        Ok(self.push(out, Op::ScaleChannels { input: x, weights }, tracked))
    }

    /// `[B, C, S, 1] -> [B, S, C]`.
    pub fn channels_to_sequence(&mut self, x: Var) -> Result<Var> {
        let out = pool::channels_to_sequence(self.value(x))?;
        let tracked = self.any_tracked(&[x]);
        Ok(self.push(out, Op::ChannelsToSequence(x), tracked))
    }

    /// `[B, T, C] -> [B, C]` elementwise maximum over time.
    pub fn max_over_time(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = pool::max_over_time(self.value(x))?;
        let tracked = self.any_tracked(&[x]);
        Ok(self.push(out, Op::MaxOverTime { input: x, argmax }, tracked))
    }

    /// Multi-head scaled dot-product attention on projected `[B, T, C]`
    /// queries, keys and values; heads are concatenated along `C`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (out, probs) =
            attention::attention(self.value(q), self.value(k), self.value(v), heads)?;
        let tracked = self.any_tracked(&[q, k, v]);
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            tracked,
        ))
    }

    /// Attention probabilities `[B, heads, T, T]` of an attention node.
    pub fn attention_probs(&self, var: Var) -> Option<&Tensor<T>> {
        match &self.nodes[var.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Every discrete decision taken by the recorded ops: which ReLU inputs
    /// were positive and which step won each max over time. The recorded
    /// function is smooth on any region where this pattern is constant.
    pub fn branch_pattern(&self) -> BranchPattern {
        let mut pattern = BranchPattern::default();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => pattern
                    .relu
                    .extend(self.value(*x).data().iter().map(|&v| v > T::zero())),
                Op::MaxOverTime { argmax, .. } => pattern.argmax.extend_from_slice(argmax),
                _ => {}
            }
        }
        pattern
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = activation::zip_with(self.value(a), self.value(b), "add", |x, y| x + y)?;
        let tracked = self.any_tracked(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), tracked))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = activation::zip_with(self.value(a), self.value(b), "mul", |x, y| x * y)?;
        let tracked = self.any_tracked(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), tracked))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let tracked = self.any_tracked(&[x]);
        self.push(out, Op::Sum(x), tracked)
    }

    /// Batch-mean categorical cross-entropy of softmax(logits) against
    /// (possibly soft) target distributions.
    pub fn cross_entropy(&mut self, logits: Var, targets: &Tensor<T>) -> Result<Var> {
        let out = loss::cross_entropy(self.value(logits), targets)?;
        let tracked = self.any_tracked(&[logits]);
        Ok(self.push(
            Tensor::scalar(out),
            Op::CrossEntropy {
                logits,
                targets: targets.clone(),
            },
            tracked,
        ))
    }

    /// Batch-mean of per-sample summed binary cross-entropy on sigmoid(logits).
    pub fn binary_cross_entropy(&mut self, logits: Var, targets: &Tensor<T>) -> Result<Var> {
        let out = loss::binary_cross_entropy(self.value(logits), targets)?;
        let tracked = self.any_tracked(&[logits]);
        Ok(self.push(
            Tensor::scalar(out),
            Op::BinaryCrossEntropy {
                logits,
                targets: targets.clone(),
            },
            tracked,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Returns gradients of every tracked
    /// leaf; intermediate gradients are released as soon as they are consumed.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.value(loss).shape();
        if self.value(loss).len() != 1 {
            return Err(TensorError::NotScalar(shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].tracked {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(shape.to_vec(), T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            if let Op::Leaf { .. } = node.op {
                continue;
            }
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            for (var, g) in self.backward_node(node, &grad) {
                debug_assert_eq!(g.shape(), self.value(var).shape());
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Tape::backward`] and adds parameter gradients into `store`.
    /// Gradients accumulate across calls until [`ParamStore::zero_grad`].
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.backward(loss)?;
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(id) } = node.op {
                if let Some(g) = &grads.grads[idx] {
                    store.get_mut(id).grad.add_assign(g);
                }
            }
        }
        Ok(())
    }

    fn backward_node(&self, node: &Node<T>, grad: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let needs = |v: Var| self.nodes[v.0].tracked;
        let val = |v: Var| &self.nodes[v.0].value;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
            } => {
                let g = conv::conv2d_backward(val(*input), val(*kernel), grad, needs(*input));
                if let Some(dx) = g.input {
                    out.push((*input, dx));
                }
                if needs(*kernel) {
                    out.push((*kernel, g.kernel));
                }
                if needs(*bias) {
                    out.push((*bias, g.bias));
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
                train,
            } => {
                let g = norm::batch_norm_backward(
                    val(*input),
                    val(*gamma),
                    grad,
                    mean,
                    inv_std,
                    *train,
                );
                if needs(*input) {
                    out.push((*input, g.input));
                }
                if needs(*gamma) {
                    out.push((*gamma, g.gamma));
                }
                if needs(*beta) {
                    out.push((*beta, g.beta));
                }
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let g = norm::layer_norm_backward(val(*input), val(*gamma), grad, mean, inv_std);
                if needs(*input) {
                    out.push((*input, g.input));
                }
                if needs(*gamma) {
                    out.push((*gamma, g.gamma));
                }
                if needs(*beta) {
                    out.push((*beta, g.beta));
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let g = linear::linear_backward(val(*input), val(*weight), grad, needs(*input));
                if let Some(dx) = g.input {
                    out.push((*input, dx));
                }
                if needs(*weight) {
                    out.push((*weight, g.weight));
                }
                if let Some(b) = bias {
                    if needs(*b) {
                        out.push((*b, g.bias));
                    }
                }
            }
            Op::Relu(x) => out.push((*x, activation::relu_backward(&node.value, grad))),
            Op::Sigmoid(x) => out.push((*x, activation::sigmoid_backward(&node.value, grad))),
            Op::Softmax(x) => out.push((*x, activation::softmax_last_backward(&node.value, grad))),
            Op::AvgPool2(x) => out.push((*x, pool::avg_pool2_backward(val(*x).shape(), grad))),
            Op::AdaptiveAvgPool { input, bins } => out.push((
                *input,
                pool::adaptive_avg_pool_backward(val(*input).shape(), *bins, grad),
            )),
            Op::MeanSpatial(x) => {
                out.push((*x, pool::mean_spatial_backward(val(*x).shape(), grad)))
            }
            Op::ScaleChannels { input, weights } => {
                let (dx, dw) = activation::scale_channels_backward(val(*input), val(*weights), grad);
                if needs(*input) {
                    out.push((*input, dx));
                }
                if needs(*weights) {
                    out.push((*weights, dw));
                }
            }
            Op::ChannelsToSequence(x) => out.push((
                *x,
                pool::channels_to_sequence_backward(val(*x).shape(), grad),
            )),
            Op::MaxOverTime { input, argmax } => out.push((
                *input,
                pool::max_over_time_backward(val(*input).shape(), argmax, grad),
            )),
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let g = attention::attention_backward(val(*q), val(*k), val(*v), *heads, probs, grad);
                if needs(*q) {
                    out.push((*q, g.q));
                }
                if needs(*k) {
                    out.push((*k, g.k));
                }
                if needs(*v) {
                    out.push((*v, g.v));
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    out.push((*a, grad.clone()));
                }
                if needs(*b) {
                    out.push((*b, grad.clone()));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if needs(*a) {
                    out.push((*a, activation::zip_with(grad, vb, "mul", |g, y| g * y).expect("shape checked in forward")));
                }
                if needs(*b) {
                    out.push((*b, activation::zip_with(grad, va, "mul", |g, x| g * x).expect("shape checked in forward")));
                }
            }
            Op::Sum(x) => out.push((*x, Tensor::full(val(*x).shape().to_vec(), grad.item()))),
            Op::CrossEntropy { logits, targets } => out.push((
                *logits,
                loss::cross_entropy_backward(val(*logits), targets, grad.item()),
            )),
            Op::BinaryCrossEntropy { logits, targets } => out.push((
                *logits,
                loss::binary_cross_entropy_backward(val(*logits), targets, grad.item()),
            )),
        }
        out.retain(|(v, _)| needs(*v));
        out
    }
}
