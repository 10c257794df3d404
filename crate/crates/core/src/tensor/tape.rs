//! Reverse-mode autodiff on an append-only tape.
//!
//! Ops validate shapes, compute forward values eagerly and record enough to
//! run the chain rule. [`Tape::backward`] walks the records newest-to-oldest
//! exactly once, accumulating gradients into every node on a path from a
//! `requires_grad` leaf to the root. A tape is single-owner, single-threaded
//! and good for one backward pass; training builds a fresh tape per step.
//!
//! Invariants the ops maintain:
//! - tensors are immutable once recorded; backward never mutates values
//! - gradient buffers match their tensor's shape exactly
//! - a [`Var`] is only meaningful on the tape that issued it

use crate::error::{Error, Result};

use super::kernels as k;
use super::{Element, Rng, Tensor};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Per-channel batch statistics: (mean, biased variance).
pub type ChannelStats<E> = (Vec<E>, Vec<E>);

/// Train/eval switch for ops whose behavior differs (dropout, batch norm).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Op<E> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    AddBias { x: Var, b: Var },
    Scale { x: Var, c: E },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxLast(Var),
    Matmul { a: Var, b: Var },
    Conv1d { x: Var, w: Var, b: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: E },
    BatchNorm { x: Var, gamma: Var, beta: Var, mean: Vec<E>, var: Vec<E>, eps: E, train: bool },
    MeanAxis { x: Var, axis: usize },
    SumAll(Var),
    Dropout { x: Var, keep: Vec<E> },
    Reshape { x: Var },
    Swap12 { x: Var },
    TransposeLast2 { x: Var },
    ConcatLast { parts: Vec<Var> },
    SliceLast { x: Var, start: usize, len: usize },
    SelectTime { x: Var, t: usize },
    StackTime { parts: Vec<Var> },
    RepeatTime { x: Var },
    MulTimeGate { x: Var, g: Var },
    MseLoss { pred: Var, target: Tensor<E> },
    MaskedMseLoss { pred: Var, truth: Tensor<E>, mask: Tensor<E> },
    FocalLoss { logits: Var, targets: Vec<usize>, gamma: E, alpha: E },
}

struct Node<E> {
    value: Tensor<E>,
    grad: Option<Vec<E>>,
    needs_grad: bool,
    op: Op<E>,
}

pub struct Tape<E> {
    nodes: Vec<Node<E>>,
    consumed: bool,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<E>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor<E>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of the root w.r.t. this node; None if the node
    /// was off every differentiable path (or backward has not run).
    pub fn grad(&self, v: Var) -> Option<&[E]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<E>> {
        self.nodes[v.0]
            .grad
            .as_ref()
            .map(|g| Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone()).unwrap())
    }

    fn push(&mut self, value: Tensor<E>, needs_grad: bool, op: Op<E>) -> Var {
        self.nodes.push(Node { value, grad: None, needs_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    // ── Elementwise and affine ──────────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let v = Tensor::new(
            self.shape(a).to_vec(),
            self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect(),
        )?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, ng, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mul", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let v = Tensor::new(
            self.shape(a).to_vec(),
            self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect(),
        )?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, ng, Op::Mul(a, b)))
    }

    /// x [..., n] + b [n], bias broadcast over all leading axes.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = *self.shape(x).last().ok_or_else(|| Error::shape("add_bias", "rank-0 input"))?;
        if self.shape(b) != [n] {
            return Err(Error::shape(
                "add_bias",
                format!(
                    "bias {:?} does not match last dim {} of {:?}",
                    self.shape(b),
                    n,
                    self.shape(x)
                ),
            ));
        }
        let bias = self.value(b).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for (i, v) in data.iter_mut().enumerate() {
            *v += bias[i % n];
        }
        let v = Tensor::new(self.shape(x).to_vec(), data)?;
        let ng = self.needs(x) || self.needs(b);
        Ok(self.push(v, ng, Op::AddBias { x, b }))
    }

    pub fn scale(&mut self, x: Var, c: E) -> Var {
        let v = self.value(x).map(|e| e * c);
        let ng = self.needs(x);
        self.push(v, ng, Op::Scale { x, c })
    }

    /// ReLU with subgradient 0 at the kink.
    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| if e > E::zero() { e } else { E::zero() });
        let ng = self.needs(x);
        self.push(v, ng, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid_scalar);
        let ng = self.needs(x);
        self.push(v, ng, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.tanh());
        let ng = self.needs(x);
        self.push(v, ng, Op::Tanh(x))
    }

    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let cols = *shape.last().ok_or_else(|| Error::shape("softmax", "rank-0 input"))?;
        let rows = self.value(x).len() / cols;
        let v = Tensor::new(shape, k::softmax_rows(self.value(x).data(), rows, cols))?;
        let ng = self.needs(x);
        Ok(self.push(v, ng, Op::SoftmaxLast(x)))
    }

    // ── Linear algebra ──────────────────────────────────────────────────

    /// a [..., m, k] @ b: rhs is either rank-2 [k, n] (broadcast over all
    /// leading axes of a) or has identical leading axes [..., k, n].
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ash, bsh) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if ash.len() < 2 {
            return Err(Error::shape("matmul", format!("lhs rank {} < 2", ash.len())));
        }
        let (m, ka) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let value = if bsh.len() == 2 {
            let (kb, n) = (bsh[0], bsh[1]);
            if ka != kb {
                return Err(Error::shape(
                    "matmul",
                    format!("inner dims {} vs {} ({:?} @ {:?})", ka, kb, ash, bsh),
                ));
            }
            let rows: usize = ash[..ash.len() - 1].iter().product();
            let mut out_shape = ash[..ash.len() - 1].to_vec();
            out_shape.push(n);
            let data = k::matmul2(self.value(a).data(), self.value(b).data(), rows, ka, n);
            Tensor::new(out_shape, data)?
        } else if bsh.len() == ash.len() && bsh[..bsh.len() - 2] == ash[..ash.len() - 2] {
            let (kb, n) = (bsh[bsh.len() - 2], bsh[bsh.len() - 1]);
            if ka != kb {
                return Err(Error::shape(
                    "matmul",
                    format!("inner dims {} vs {} ({:?} @ {:?})", ka, kb, ash, bsh),
                ));
            }
            let batch: usize = ash[..ash.len() - 2].iter().product();
            let mut out_shape = ash[..ash.len() - 2].to_vec();
            out_shape.extend([m, n]);
            let mut data = vec![E::zero(); batch * m * n];
            for bi in 0..batch {
                k::gemm_into(
                    E::one(),
                    &self.value(a).data()[bi * m * ka..(bi + 1) * m * ka],
                    m,
                    ka,
                    false,
                    &self.value(b).data()[bi * ka * n..(bi + 1) * ka * n],
                    ka,
                    n,
                    false,
                    E::zero(),
                    &mut data[bi * m * n..(bi + 1) * m * n],
                );
            }
            Tensor::new(out_shape, data)?
        } else {
            return Err(Error::shape(
                "matmul",
                format!("incompatible shapes {:?} @ {:?}", ash, bsh),
            ));
        };
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, ng, Op::Matmul { a, b }))
    }

    /// Cross-correlation over time: x [B, Cin, T], w [Cout, Cin, k] with odd
    /// k, zero padding (k-1)/2, stride 1. Output [B, Cout, T].
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 3 {
            return Err(Error::shape("conv1d", format!("x {:?}, w {:?}", xs, ws)));
        }
        let (b, c_in, t) = (xs[0], xs[1], xs[2]);
        let (c_out, wc, kk) = (ws[0], ws[1], ws[2]);
        if wc != c_in || kk % 2 == 0 || kk == 0 {
            return Err(Error::shape(
                "conv1d",
                format!("w {:?} incompatible with x {:?} (need odd k, matching channels)", ws, xs),
            ));
        }
        if self.shape(bias) != [c_out] {
            return Err(Error::shape(
                "conv1d",
                format!("bias {:?}, want [{}]", self.shape(bias), c_out),
            ));
        }
        let data = k::conv1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(bias).data(),
            b,
            c_in,
            t,
            c_out,
            kk,
        );
        let v = Tensor::new(vec![b, c_out, t], data)?;
        let ng = self.needs(x) || self.needs(w) || self.needs(bias);
        Ok(self.push(v, ng, Op::Conv1d { x, w, b: bias }))
    }

    // ── Normalization, dropout ──────────────────────────────────────────

    /// Layer norm over the last axis: y = (x - mean)/sqrt(var + eps)·gamma + beta.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: E) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let dim = *shape.last().ok_or_else(|| Error::shape("layer_norm", "rank-0 input"))?;
        if self.shape(gamma) != [dim] || self.shape(beta) != [dim] {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "gamma {:?} / beta {:?}, want [{}]",
                    self.shape(gamma),
                    self.shape(beta),
                    dim
                ),
            ));
        }
        let rows = self.value(x).len() / dim;
        let data = k::layer_norm_forward(
            self.value(x).data(),
            rows,
            dim,
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        let v = Tensor::new(shape, data)?;
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(v, ng, Op::LayerNorm { x, gamma, beta, eps }))
    }

    /// Batch norm on x [B, C, T], normalizing each channel over (B, T).
    /// Stats tuples are (per-channel mean, per-channel biased variance).
    /// Train mode normalizes by batch statistics (biased variance) and
    /// returns them so the caller can fold into running buffers; eval mode
    /// normalizes by the supplied running statistics. Train requires B·T >= 2.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[E],
        running_var: &[E],
        eps: E,
        mode: Mode,
    ) -> Result<(Var, Option<ChannelStats<E>>)> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::shape("batch_norm", format!("x {:?}, want rank 3", xs)));
        }
        let (b, c, t) = (xs[0], xs[1], xs[2]);
        if self.shape(gamma) != [c]
            || self.shape(beta) != [c]
            || running_mean.len() != c
            || running_var.len() != c
        {
            return Err(Error::shape(
                "batch_norm",
                format!("parameter lengths do not match {} channels", c),
            ));
        }
        let train = mode == Mode::Train;
        if train && b * t < 2 {
            return Err(Error::shape(
                "batch_norm",
                format!("train mode needs B*T >= 2, got {}", b * t),
            ));
        }
        let (mean, var) = if train {
            k::batch_stats(self.value(x).data(), b, c, t)
        } else {
            (running_mean.to_vec(), running_var.to_vec())
        };
        let data = k::batch_norm_apply(
            self.value(x).data(),
            b,
            c,
            t,
            &mean,
            &var,
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        let v = Tensor::new(xs, data)?;
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let stats = if train { Some((mean.clone(), var.clone())) } else { None };
        let out = self.push(v, ng, Op::BatchNorm { x, gamma, beta, mean, var, eps, train });
        Ok((out, stats))
    }

    /// Inverted dropout: keep with probability 1-p and rescale by 1/(1-p) so
    /// expectations match eval. Eval mode and p = 0 are the identity and
    /// consume no randomness.
    pub fn dropout(&mut self, x: Var, p: f64, mode: Mode, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {} outside [0, 1)", p)));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let scale = E::from_f64(1.0 / (1.0 - p));
        let keep: Vec<E> = (0..self.value(x).len())
            .map(|_| if rng.uniform01() < p { E::zero() } else { scale })
            .collect();
        let data: Vec<E> = self.value(x).data().iter().zip(&keep).map(|(&v, &m)| v * m).collect();
        let v = Tensor::new(self.shape(x).to_vec(), data)?;
        let ng = self.needs(x);
        Ok(self.push(v, ng, Op::Dropout { x, keep }))
    }

    // ── Reductions and layout ───────────────────────────────────────────

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("mean_axis", format!("axis {} of {:?}", axis, shape)));
        }
        let (outer, len, inner) = k::axis_split(&shape, axis);
        let data = k::mean_axis(self.value(x).data(), outer, len, inner);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let v = Tensor::new(out_shape, data)?;
        let ng = self.needs(x);
        Ok(self.push(v, ng, Op::MeanAxis { x, axis }))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let mut s = E::zero();
        for &v in self.value(x).data() {
            s += v;
        }
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), ng, Op::SumAll(x))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(x).reshaped(shape)?;
        let ng = self.needs(x);
        Ok(self.push(v, ng, Op::Reshape { x }))
    }

    /// Swap axes 1 and 2 of a rank >= 3 tensor.
    pub fn swap12(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 3 {
            return Err(Error::shape("swap12", format!("rank {} < 3", shape.len())));
        }
        let inner: usize = shape[3..].iter().product();
        let data = k::swap12(self.value(x).data(), shape[0], shape[1], shape[2], inner);
        let mut out_shape = shape.clone();
        out_shape.swap(1, 2);
        let v = Tensor::new(out_shape, data)?;
        let ng = self.needs(x);
        Ok(self.push(v, ng, Op::Swap12 { x }))
    }

    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape("transpose_last2", format!("rank {} < 2", shape.len())));
        }
        let (m, n) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let batch: usize = shape[..shape.len() - 2].iter().product();
        let data = k::transpose_last2(self.value(x).data(), batch, m, n);
        let mut out_shape = shape.clone();
        let r = out_shape.len();
        out_shape.swap(r - 2, r - 1);
        let v = Tensor::new(out_shape, data)?;
        let ng = self.needs(x);
        Ok(self.push(v, ng, Op::TransposeLast2 { x }))
    }

    /// Concatenate along the last axis; leading axes must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_last", "no parts"));
        }
        let lead = self.shape(parts[0])[..self.shape(parts[0]).len() - 1].to_vec();
        let mut total_last = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..s.len() - 1] != lead[..] {
                return Err(Error::shape(
                    "concat_last",
                    format!("part {:?} vs leading {:?}", s, lead),
                ));
            }
            total_last += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut data = vec![E::zero(); rows * total_last];
        let mut offset = 0;
        for &p in parts {
            let n = *self.shape(p).last().unwrap();
            let src = self.value(p).data();
            for r in 0..rows {
                data[r * total_last + offset..r * total_last + offset + n]
                    .copy_from_slice(&src[r * n..(r + 1) * n]);
            }
            offset += n;
        }
        let mut out_shape = lead;
        out_shape.push(total_last);
        let v = Tensor::new(out_shape, data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(v, ng, Op::ConcatLast { parts: parts.to_vec() }))
    }

    /// Contiguous slice of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().ok_or_else(|| Error::shape("slice_last", "rank-0 input"))?;
        if len == 0 || start + len > n {
            return Err(Error::shape(
                "slice_last",
                format!("[{start}, {start}+{len}) of last dim {n}"),
            ));
        }
        let rows = self.value(x).len() / n;
        let mut data = vec![E::zero(); rows * len];
        let src = self.value(x).data();
        for r in 0..rows {
            data[r * len..(r + 1) * len].copy_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let mut out_shape = shape.clone();
        *out_shape.last_mut().unwrap() = len;
        let v = Tensor::new(out_shape, data)?;
        let ng = self.needs(x);
        Ok(self.push(v, ng, Op::SliceLast { x, start, len }))
    }

    /// Row t of the time axis: x [B, T, D] -> [B, D].
    pub fn select_time(&mut self, x: Var, t: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || t >= shape[1] {
            return Err(Error::shape("select_time", format!("t {} of {:?}", t, shape)));
        }
        let (b, tt, d) = (shape[0], shape[1], shape[2]);
        let src = self.value(x).data();
        let mut data = vec![E::zero(); b * d];
        for bi in 0..b {
            data[bi * d..(bi + 1) * d]
                .copy_from_slice(&src[(bi * tt + t) * d..(bi * tt + t) * d + d]);
        }
        let v = Tensor::new(vec![b, d], data)?;
        let ng = self.needs(x);
        Ok(self.push(v, ng, Op::SelectTime { x, t }))
    }

    /// Stack T rank-2 tensors [B, D] into [B, T, D], in argument order.
    pub fn stack_time(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("stack_time", "no parts"));
        }
        let s0 = self.shape(parts[0]).to_vec();
        if s0.len() != 2 {
            return Err(Error::shape("stack_time", format!("parts must be rank 2, got {:?}", s0)));
        }
        for &p in parts {
            if self.shape(p) != s0 {
                return Err(Error::shape("stack_time", format!("{:?} vs {:?}", self.shape(p), s0)));
            }
        }
        let (b, d) = (s0[0], s0[1]);
        let t = parts.len();
        let mut data = vec![E::zero(); b * t * d];
        for (ti, &p) in parts.iter().enumerate() {
            let src = self.value(p).data();
            for bi in 0..b {
                data[(bi * t + ti) * d..(bi * t + ti) * d + d]
                    .copy_from_slice(&src[bi * d..(bi + 1) * d]);
            }
        }
        let v = Tensor::new(vec![b, t, d], data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(v, ng, Op::StackTime { parts: parts.to_vec() }))
    }

    /// Broadcast x [B, d] to [B, t, d]; every step holds an identical copy,
    /// so the gradient sums over the t copies.
    pub fn repeat_time(&mut self, x: Var, t: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || t == 0 {
            return Err(Error::shape("repeat_time", format!("x {:?}, t {}", shape, t)));
        }
        let (b, d) = (shape[0], shape[1]);
        let src = self.value(x).data();
        let mut data = vec![E::zero(); b * t * d];
        for bi in 0..b {
            for ti in 0..t {
                data[(bi * t + ti) * d..(bi * t + ti) * d + d]
                    .copy_from_slice(&src[bi * d..(bi + 1) * d]);
            }
        }
        let v = Tensor::new(vec![b, t, d], data)?;
        let ng = self.needs(x);
        Ok(self.push(v, ng, Op::RepeatTime { x }))
    }

    /// Channel gate broadcast over time: x [B, T, d] ⊙ g [B, d].
    pub fn mul_time_gate(&mut self, x: Var, g: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let gs = self.shape(g).to_vec();
        if xs.len() != 3 || gs.len() != 2 || xs[0] != gs[0] || xs[2] != gs[1] {
            return Err(Error::shape("mul_time_gate", format!("x {:?} vs gate {:?}", xs, gs)));
        }
        let (b, t, d) = (xs[0], xs[1], xs[2]);
        let gv = self.value(g).data();
        let xv = self.value(x).data();
        let mut data = vec![E::zero(); xv.len()];
        for bi in 0..b {
            for ti in 0..t {
                let o = (bi * t + ti) * d;
                for di in 0..d {
                    data[o + di] = xv[o + di] * gv[bi * d + di];
                }
            }
        }
        let v = Tensor::new(xs, data)?;
        let ng = self.needs(x) || self.needs(g);
        Ok(self.push(v, ng, Op::MulTimeGate { x, g }))
    }

    // ── Losses ──────────────────────────────────────────────────────────

    /// Mean squared error over all elements; target is a constant.
    pub fn mse_loss(&mut self, pred: Var, target: &Tensor<E>) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(Error::shape(
                "mse_loss",
                format!("{:?} vs {:?}", self.shape(pred), target.shape()),
            ));
        }
        let n = E::from_usize(target.len());
        let mut s = E::zero();
        for (&p, &t) in self.value(pred).data().iter().zip(target.data()) {
            let d = p - t;
            s += d * d;
        }
        let ng = self.needs(pred);
        Ok(self.push(Tensor::scalar(s / n), ng, Op::MseLoss { pred, target: target.clone() }))
    }

    /// MSE averaged over masked cells only (mask entries are 0 or 1; at
    /// least one cell must be masked). With an all-ones mask this equals
    /// mse_loss exactly.
    pub fn masked_mse_loss(
        &mut self,
        pred: Var,
        truth: &Tensor<E>,
        mask: &Tensor<E>,
    ) -> Result<Var> {
        if self.shape(pred) != truth.shape() || self.shape(pred) != mask.shape() {
            return Err(Error::shape(
                "masked_mse_loss",
                format!(
                    "pred {:?}, truth {:?}, mask {:?}",
                    self.shape(pred),
                    truth.shape(),
                    mask.shape()
                ),
            ));
        }
        debug_assert!(
            mask.data().iter().all(|&m| m == E::zero() || m == E::one()),
            "mask entries must be 0 or 1"
        );
        let mut count = 0usize;
        let mut s = E::zero();
        for ((&p, &t), &m) in self.value(pred).data().iter().zip(truth.data()).zip(mask.data()) {
            if m == E::one() {
                let d = p - t;
                s += d * d;
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::shape("masked_mse_loss", "mask selects no cells"));
        }
        let ng = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(s / E::from_usize(count)),
            ng,
            Op::MaskedMseLoss { pred, truth: truth.clone(), mask: mask.clone() },
        ))
    }

    /// Focal loss, mean over the batch: -alpha·(1-p_t)^gamma·log p_t with
    /// p = softmax(logits). Computed through log-softmax so extreme logits
    /// stay finite. gamma = 0, alpha = 1 reduces to cross-entropy.
    pub fn focal_loss(
        &mut self,
        logits: Var,
        targets: &[usize],
        gamma: E,
        alpha: E,
    ) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(Error::shape(
                "focal_loss",
                format!("logits {:?} vs {} targets", shape, targets.len()),
            ));
        }
        if gamma < E::zero() || alpha <= E::zero() || alpha > E::one() {
            return Err(Error::Config(format!(
                "focal loss wants gamma >= 0 and 0 < alpha <= 1, got {gamma}, {alpha}"
            )));
        }
        let (bsz, c) = (shape[0], shape[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::shape(
                "focal_loss",
                format!("target class {} out of range 0..{}", bad, c),
            ));
        }
        let z = self.value(logits).data();
        let mut total = E::zero();
        for (i, &t) in targets.iter().enumerate() {
            let row = &z[i * c..(i + 1) * c];
            let logp_t = log_softmax_at(row, t);
            let p_t = logp_t.exp();
            let u = E::one() - p_t;
            total += -alpha * u.powf(gamma) * logp_t;
        }
        let ng = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(total / E::from_usize(bsz)),
            ng,
            Op::FocalLoss { logits, targets: targets.to_vec(), gamma, alpha },
        ))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar root. Visits each recorded op at most
    /// once, newest first, accumulating gradients into its inputs. The tape
    /// is consumed: a second backward on the same tape is an error.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::shape("backward", "tape already consumed by a previous backward"));
        }
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must be scalar, got {:?}", self.nodes[root.0].value.shape()),
            ));
        }
        self.consumed = true;
        self.nodes[root.0].grad = Some(vec![E::one()]);
        for i in (0..=root.0).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            let g = self.nodes[i].grad.clone().expect("grad checked above");
            self.step_back(i, op, &g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, contrib: Vec<E>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        debug_assert_eq!(contrib.len(), self.nodes[v.0].value.len());
        match &mut self.nodes[v.0].grad {
            Some(buf) => {
                for (b, c) in buf.iter_mut().zip(contrib) {
                    *b += c;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn step_back(&mut self, out: usize, op: Op<E>, g: &[E]) {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(a, g.to_vec());
                self.acc(b, g.to_vec());
            }
            Op::Mul(a, b) => {
                let da: Vec<E> =
                    g.iter().zip(self.nodes[b.0].value.data()).map(|(&gi, &bv)| gi * bv).collect();
                let db: Vec<E> =
                    g.iter().zip(self.nodes[a.0].value.data()).map(|(&gi, &av)| gi * av).collect();
                self.acc(a, da);
                self.acc(b, db);
            }
            Op::AddBias { x, b } => {
                let n = self.nodes[b.0].value.len();
                let mut db = vec![E::zero(); n];
                for (i, &gi) in g.iter().enumerate() {
                    db[i % n] += gi;
                }
                self.acc(x, g.to_vec());
                self.acc(b, db);
            }
            Op::Scale { x, c } => {
                self.acc(x, g.iter().map(|&gi| gi * c).collect());
            }
            Op::Relu(x) => {
                let dx: Vec<E> = g
                    .iter()
                    .zip(self.nodes[x.0].value.data())
                    .map(|(&gi, &xv)| if xv > E::zero() { gi } else { E::zero() })
                    .collect();
                self.acc(x, dx);
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[out].value.data();
                let dx: Vec<E> =
                    g.iter().zip(y).map(|(&gi, &yi)| gi * yi * (E::one() - yi)).collect();
                self.acc(x, dx);
            }
            Op::Tanh(x) => {
                let y = self.nodes[out].value.data();
                let dx: Vec<E> =
                    g.iter().zip(y).map(|(&gi, &yi)| gi * (E::one() - yi * yi)).collect();
                self.acc(x, dx);
            }
            Op::SoftmaxLast(x) => {
                let y = self.nodes[out].value.data();
                let cols = *self.nodes[out].value.shape().last().unwrap();
                let rows = y.len() / cols;
                let dx = k::softmax_backward(y, g, rows, cols);
                self.acc(x, dx);
            }
            Op::Matmul { a, b } => self.matmul_back(a, b, g),
            Op::Conv1d { x, w, b } => {
                let xs = self.nodes[x.0].value.shape().to_vec();
                let ws = self.nodes[w.0].value.shape().to_vec();
                let (dx, dw, db) = k::conv1d_backward(
                    self.nodes[x.0].value.data(),
                    self.nodes[w.0].value.data(),
                    g,
                    xs[0],
                    xs[1],
                    xs[2],
                    ws[0],
                    ws[2],
                );
                self.acc(x, dx);
                self.acc(w, dw);
                self.acc(b, db);
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let dim = self.nodes[gamma.0].value.len();
                let rows = self.nodes[x.0].value.len() / dim;
                let (dx, dgamma, dbeta) = k::layer_norm_backward(
                    self.nodes[x.0].value.data(),
                    g,
                    rows,
                    dim,
                    self.nodes[gamma.0].value.data(),
                    eps,
                );
                self.acc(x, dx);
                self.acc(gamma, dgamma);
                self.acc(beta, dbeta);
            }
            Op::BatchNorm { x, gamma, beta, mean, var, eps, train } => {
                let xs = self.nodes[x.0].value.shape().to_vec();
                let (dx, dgamma, dbeta) = k::batch_norm_backward(
                    self.nodes[x.0].value.data(),
                    g,
                    xs[0],
                    xs[1],
                    xs[2],
                    &mean,
                    &var,
                    self.nodes[gamma.0].value.data(),
                    eps,
                    train,
                );
                self.acc(x, dx);
                self.acc(gamma, dgamma);
                self.acc(beta, dbeta);
            }
            Op::MeanAxis { x, axis } => {
                let shape = self.nodes[x.0].value.shape().to_vec();
                let (outer, len, inner) = k::axis_split(&shape, axis);
                let scale = E::one() / E::from_usize(len);
                let mut dx = vec![E::zero(); self.nodes[x.0].value.len()];
                for o in 0..outer {
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        for i in 0..inner {
                            dx[base + i] = g[o * inner + i] * scale;
                        }
                    }
                }
                self.acc(x, dx);
            }
            Op::SumAll(x) => {
                self.acc(x, vec![g[0]; self.nodes[x.0].value.len()]);
            }
            Op::Dropout { x, keep } => {
                let dx: Vec<E> = g.iter().zip(&keep).map(|(&gi, &m)| gi * m).collect();
                self.acc(x, dx);
            }
            Op::Reshape { x } => {
                self.acc(x, g.to_vec());
            }
            Op::Swap12 { x } => {
                // output dims are (d0, d2, d1); swapping back restores input layout
                let os = self.nodes[out].value.shape().to_vec();
                let inner: usize = os[3..].iter().product();
                let dx = k::swap12(g, os[0], os[1], os[2], inner);
                self.acc(x, dx);
            }
            Op::TransposeLast2 { x } => {
                let os = self.nodes[out].value.shape().to_vec();
                let (m, n) = (os[os.len() - 2], os[os.len() - 1]);
                let batch: usize = os[..os.len() - 2].iter().product();
                let dx = k::transpose_last2(g, batch, m, n);
                self.acc(x, dx);
            }
            Op::ConcatLast { parts } => {
                let total = *self.nodes[out].value.shape().last().unwrap();
                let rows = self.nodes[out].value.len() / total;
                let mut offset = 0;
                for &p in &parts {
                    let n = *self.nodes[p.0].value.shape().last().unwrap();
                    let mut dp = vec![E::zero(); rows * n];
                    for r in 0..rows {
                        dp[r * n..(r + 1) * n]
                            .copy_from_slice(&g[r * total + offset..r * total + offset + n]);
                    }
                    self.acc(p, dp);
                    offset += n;
                }
            }
            Op::SliceLast { x, start, len } => {
                let n = *self.nodes[x.0].value.shape().last().unwrap();
                let rows = self.nodes[x.0].value.len() / n;
                let mut dx = vec![E::zero(); self.nodes[x.0].value.len()];
                for r in 0..rows {
                    dx[r * n + start..r * n + start + len]
                        .copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                self.acc(x, dx);
            }
            Op::SelectTime { x, t } => {
                let xs = self.nodes[x.0].value.shape().to_vec();
                let (b, tt, d) = (xs[0], xs[1], xs[2]);
                let mut dx = vec![E::zero(); b * tt * d];
                for bi in 0..b {
                    dx[(bi * tt + t) * d..(bi * tt + t) * d + d]
                        .copy_from_slice(&g[bi * d..(bi + 1) * d]);
                }
                self.acc(x, dx);
            }
            Op::StackTime { parts } => {
                let os = self.nodes[out].value.shape().to_vec();
                let (b, t, d) = (os[0], os[1], os[2]);
                for (ti, &p) in parts.iter().enumerate() {
                    let mut dp = vec![E::zero(); b * d];
                    for bi in 0..b {
                        dp[bi * d..(bi + 1) * d]
                            .copy_from_slice(&g[(bi * t + ti) * d..(bi * t + ti) * d + d]);
                    }
                    self.acc(p, dp);
                }
            }
            Op::RepeatTime { x } => {
                let os = self.nodes[out].value.shape().to_vec();
                let (b, t, d) = (os[0], os[1], os[2]);
                let mut dx = vec![E::zero(); b * d];
                for bi in 0..b {
                    for ti in 0..t {
                        let o = (bi * t + ti) * d;
                        for di in 0..d {
                            dx[bi * d + di] += g[o + di];
                        }
                    }
                }
                self.acc(x, dx);
            }
            Op::MulTimeGate { x, g: gate } => {
                let xs = self.nodes[x.0].value.shape().to_vec();
                let (b, t, d) = (xs[0], xs[1], xs[2]);
                let gv = self.nodes[gate.0].value.data().to_vec();
                let xv = self.nodes[x.0].value.data();
                let mut dx = vec![E::zero(); xv.len()];
                let mut dg = vec![E::zero(); b * d];
                for bi in 0..b {
                    for ti in 0..t {
                        let o = (bi * t + ti) * d;
                        for di in 0..d {
                            dx[o + di] = g[o + di] * gv[bi * d + di];
                            dg[bi * d + di] += g[o + di] * xv[o + di];
                        }
                    }
                }
                self.acc(x, dx);
                self.acc(gate, dg);
            }
            Op::MseLoss { pred, target } => {
                let n = E::from_usize(target.len());
                let two = E::from_f64(2.0);
                let dp: Vec<E> = self.nodes[pred.0]
                    .value
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&p, &t)| g[0] * two * (p - t) / n)
                    .collect();
                self.acc(pred, dp);
            }
            Op::MaskedMseLoss { pred, truth, mask } => {
                let mut count = 0usize;
                for &m in mask.data() {
                    if m == E::one() {
                        count += 1;
                    }
                }
                let cnt = E::from_usize(count);
                let two = E::from_f64(2.0);
                let dp: Vec<E> = self.nodes[pred.0]
                    .value
                    .data()
                    .iter()
                    .zip(truth.data())
                    .zip(mask.data())
                    .map(|((&p, &t), &m)| g[0] * two * m * (p - t) / cnt)
                    .collect();
                self.acc(pred, dp);
            }
            Op::FocalLoss { logits, targets, gamma, alpha } => {
                let shape = self.nodes[logits.0].value.shape().to_vec();
                let (bsz, c) = (shape[0], shape[1]);
                let z = self.nodes[logits.0].value.data();
                let gb = g[0] / E::from_usize(bsz);
                let mut dz = vec![E::zero(); bsz * c];
                for (i, &t) in targets.iter().enumerate() {
                    let row = &z[i * c..(i + 1) * c];
                    let probs = k::softmax_rows(row, 1, c);
                    let logp_t = log_softmax_at(row, t);
                    let p_t = probs[t];
                    let u = E::one() - p_t;
                    // d/dz_j of -alpha·u^gamma·logp_t  =  alpha·bracket·(delta_tj - p_j)
                    // bracket = gamma·u^(gamma-1)·p_t·logp_t - u^gamma, -> 0 as p_t -> 1
                    let bracket = if u > E::zero() {
                        gamma * u.powf(gamma - E::one()) * (p_t * logp_t) - u.powf(gamma)
                    } else {
                        E::zero()
                    };
                    for j in 0..c {
                        let delta = if j == t { E::one() } else { E::zero() };
                        dz[i * c + j] = gb * alpha * bracket * (delta - probs[j]);
                    }
                }
                self.acc(logits, dz);
            }
        }
    }

    fn matmul_back(&mut self, a: Var, b: Var, g: &[E]) {
        let ash = self.nodes[a.0].value.shape().to_vec();
        let bsh = self.nodes[b.0].value.shape().to_vec();
        let (m, ka) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        if bsh.len() == 2 {
            let n = bsh[1];
            let rows: usize = ash[..ash.len() - 1].iter().product();
            if self.nodes[a.0].needs_grad {
                let mut da = vec![E::zero(); rows * ka];
                k::gemm_into(
                    E::one(),
                    g,
                    rows,
                    n,
                    false,
                    self.nodes[b.0].value.data(),
                    ka,
                    n,
                    true,
                    E::zero(),
                    &mut da,
                );
                self.acc(a, da);
            }
            if self.nodes[b.0].needs_grad {
                let mut db = vec![E::zero(); ka * n];
                k::gemm_into(
                    E::one(),
                    self.nodes[a.0].value.data(),
                    rows,
                    ka,
                    true,
                    g,
                    rows,
                    n,
                    false,
                    E::zero(),
                    &mut db,
                );
                self.acc(b, db);
            }
        } else {
            let n = bsh[bsh.len() - 1];
            let batch: usize = ash[..ash.len() - 2].iter().product();
            if self.nodes[a.0].needs_grad {
                let mut da = vec![E::zero(); batch * m * ka];
                for bi in 0..batch {
                    k::gemm_into(
                        E::one(),
                        &g[bi * m * n..(bi + 1) * m * n],
                        m,
                        n,
                        false,
                        &self.nodes[b.0].value.data()[bi * ka * n..(bi + 1) * ka * n],
                        ka,
                        n,
                        true,
                        E::zero(),
                        &mut da[bi * m * ka..(bi + 1) * m * ka],
                    );
                }
                self.acc(a, da);
            }
            if self.nodes[b.0].needs_grad {
                let mut db = vec![E::zero(); batch * ka * n];
                for bi in 0..batch {
                    k::gemm_into(
                        E::one(),
                        &self.nodes[a.0].value.data()[bi * m * ka..(bi + 1) * m * ka],
                        m,
                        ka,
                        true,
                        &g[bi * m * n..(bi + 1) * m * n],
                        m,
                        n,
                        false,
                        E::zero(),
                        &mut db[bi * ka * n..(bi + 1) * ka * n],
                    );
                }
                self.acc(b, db);
            }
        }
    }
}

fn sigmoid_scalar<E: Element>(x: E) -> E {
    // Split on sign so exp never overflows.
    if x >= E::zero() {
        E::one() / (E::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::one() + e)
    }
}

/// log softmax(row)[t], max-shifted.
fn log_softmax_at<E: Element>(row: &[E], t: usize) -> E {
    let m = row.iter().cloned().fold(E::neg_infinity(), E::max);
    let mut sum = E::zero();
    for &v in row {
        sum += (v - m).exp();
    }
    row[t] - m - sum.ln()
}
