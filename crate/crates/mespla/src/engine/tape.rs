//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Operations append nodes in topological order; `backward` walks the tape in
//! reverse and accumulates gradients into every `requires_grad` ancestor.
//! Every op checks shapes on entry and rejects non-finite outputs.

use crate::engine::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::engine::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Matmul(NodeId, NodeId),
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    },
    PointwiseConv1d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
        mean: Vec<f64>,
        var: Vec<f64>,
        train: bool,
    },
    MaxPool2d {
        x: NodeId,
        argmax: Vec<usize>,
    },
    MaxOverPoints {
        x: NodeId,
        argmax: Vec<usize>,
    },
    MeanOverAxis {
        x: NodeId,
        axis: usize,
    },
    Softmax {
        x: NodeId,
        axis: usize,
    },
    MaskedSoftmaxRows {
        x: NodeId,
        mask: Vec<bool>,
    },
    Concat {
        inputs: Vec<NodeId>,
        axis: usize,
    },
    WeightedSum {
        feats: Vec<NodeId>,
        weights: NodeId,
    },
    PointTransform {
        pts: NodeId,
        t: NodeId,
    },
    Reshape(NodeId),
    Transpose12(NodeId),
    MseLoss {
        pred: NodeId,
        target: NodeId,
    },
    SumAll(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Running statistics handed back by a train-mode batchnorm.
#[derive(Debug, Clone, PartialEq)]
pub struct BnUpdate {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Untracked input.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_unchecked(value, false, Op::Leaf)
    }

    /// Tracked input; gradients accumulate here.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push_unchecked(value, true, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient buffer, if this node received one during backward.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    /// Gradient or zeros: parameters not on the loss path get zero gradients.
    pub fn grad_or_zeros(&self, id: NodeId) -> Vec<f64> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => vec![0.0; self.nodes[id.0].value.numel()],
        }
    }

    pub fn reset_gradients(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
        self.backward_done = false;
    }

    fn push_unchecked(&mut self, value: Tensor, requires_grad: bool, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, requires_grad: bool, op: Op) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::Numeric(format!(
                "{op_name} produced a non-finite value"
            )));
        }
        Ok(self.push_unchecked(value, requires_grad, op))
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape {
                op,
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        Ok(())
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.push("add", value, self.rg(&[a, b]), Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.push("sub", value, self.rg(&[a, b]), Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.push("mul", value, self.rg(&[a, b]), Op::Mul(a, b))
    }

    // ---- activations ----

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let data = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data)?;
        self.push("relu", value, self.rg(&[x]), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data)?;
        self.push("sigmoid", value, self.rg(&[x]), Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let data = self.value(x).data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data)?;
        self.push("tanh", value, self.rg(&[x]), Op::Tanh(x))
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), m, k, n, &mut out, false);
        let value = Tensor::new(vec![m, n], out)?;
        self.push("matmul", value, self.rg(&[a, b]), Op::Matmul(a, b))
    }

    /// Affine map for a batch of rows: y = x w + b.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (sx, sw) = (self.value(x).shape(), self.value(w).shape());
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] {
            return Err(Error::Shape {
                op: "linear",
                lhs: sx.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        let (batch, d_in, d_out) = (sx[0], sx[1], sw[1]);
        if let Some(bias) = b {
            let sb = self.value(bias).shape();
            if sb != [d_out] {
                return Err(Error::Shape {
                    op: "linear_bias",
                    lhs: vec![d_out],
                    rhs: sb.to_vec(),
                });
            }
        }
        let mut out = vec![0.0; batch * d_out];
        gemm_nn(self.value(x).data(), self.value(w).data(), batch, d_in, d_out, &mut out, false);
        if let Some(bias) = b {
            let bd = self.value(bias).data();
            for row in out.chunks_mut(d_out) {
                for (o, v) in row.iter_mut().zip(bd.iter()) {
                    *o += v;
                }
            }
        }
        let value = Tensor::new(vec![batch, d_out], out)?;
        let rg = self.rg(&[x, w]) || b.map(|bb| self.rg(&[bb])).unwrap_or(false);
        self.push("linear", value, rg, Op::Linear { x, w, b })
    }

    // ---- convolutions ----

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let (sx, sw) = (self.value(x).shape(), self.value(w).shape());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(Error::Shape {
                op: "conv2d",
                lhs: sx.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        if stride == 0 {
            return Err(Error::Contract("conv2d stride must be >= 1".into()));
        }
        let (bsz, c_in, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (c_out, kh, kw) = (sw[0], sw[2], sw[3]);
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(Error::Shape {
                op: "conv2d_undersized",
                lhs: sx.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        if let Some(bias) = b {
            if self.value(bias).shape() != [c_out] {
                return Err(Error::Shape {
                    op: "conv2d_bias",
                    lhs: vec![c_out],
                    rhs: self.value(bias).shape().to_vec(),
                });
            }
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let k = c_in * kh * kw;
        let m = bsz * oh * ow;
        let cols = im2col(self.value(x).data(), bsz, c_in, h, wd, kh, kw, stride, pad, oh, ow);
        let mut y_mat = vec![0.0; m * c_out];
        gemm_nt(&cols, self.value(w).data(), m, k, c_out, &mut y_mat, false);
        let mut out = vec![0.0; bsz * c_out * oh * ow];
        let bias_data = b.map(|bb| self.value(bb).data().to_vec());
        for bi in 0..bsz {
            for co in 0..c_out {
                let add = bias_data.as_ref().map(|v| v[co]).unwrap_or(0.0);
                for s in 0..oh * ow {
                    out[((bi * c_out) + co) * oh * ow + s] = y_mat[(bi * oh * ow + s) * c_out + co] + add;
                }
            }
        }
        let value = Tensor::new(vec![bsz, c_out, oh, ow], out)?;
        let rg = self.rg(&[x, w]) || b.map(|bb| self.rg(&[bb])).unwrap_or(false);
        self.push(
            "conv2d",
            value,
            rg,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
        )
    }

    /// Shared per-point linear map over [B, C_in, N]: a 1x1 "convolution".
    pub fn pointwise_conv1d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (sx, sw) = (self.value(x).shape(), self.value(w).shape());
        if sx.len() != 3 || sw.len() != 2 || sx[1] != sw[1] {
            return Err(Error::Shape {
                op: "pointwise_conv1d",
                lhs: sx.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        let (bsz, c_in, n) = (sx[0], sx[1], sx[2]);
        let c_out = sw[0];
        if let Some(bias) = b {
            if self.value(bias).shape() != [c_out] {
                return Err(Error::Shape {
                    op: "pointwise_conv1d_bias",
                    lhs: vec![c_out],
                    rhs: self.value(bias).shape().to_vec(),
                });
            }
        }
        let mut out = vec![0.0; bsz * c_out * n];
        for bi in 0..bsz {
            let xb = &self.value(x).data()[bi * c_in * n..(bi + 1) * c_in * n];
            let yb = &mut out[bi * c_out * n..(bi + 1) * c_out * n];
            gemm_nn(self.value(w).data(), xb, c_out, c_in, n, yb, false);
        }
        if let Some(bias) = b {
            let bd = self.value(bias).data().to_vec();
            for bi in 0..bsz {
                for co in 0..c_out {
                    let row = &mut out[(bi * c_out + co) * n..(bi * c_out + co + 1) * n];
                    for v in row.iter_mut() {
                        *v += bd[co];
                    }
                }
            }
        }
        let value = Tensor::new(vec![bsz, c_out, n], out)?;
        let rg = self.rg(&[x, w]) || b.map(|bb| self.rg(&[bb])).unwrap_or(false);
        self.push("pointwise_conv1d", value, rg, Op::PointwiseConv1d { x, w, b })
    }

    // ---- normalization ----

    /// Batch normalization over channel axis 1. Train mode normalizes with
    /// batch statistics (batch >= 2) and returns updated running statistics;
    /// eval mode uses the provided running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
        train: bool,
        running_mean: &[f64],
        running_var: &[f64],
        momentum: f64,
    ) -> Result<(NodeId, Option<BnUpdate>)> {
        let sx = self.value(x).shape().to_vec();
        if sx.len() < 2 {
            return Err(Error::Shape {
                op: "batchnorm",
                lhs: sx,
                rhs: vec![],
            });
        }
        let c = sx[1];
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(Error::Shape {
                op: "batchnorm_affine",
                lhs: vec![c],
                rhs: self.value(gamma).shape().to_vec(),
            });
        }
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::Shape {
                op: "batchnorm_running",
                lhs: vec![c],
                rhs: vec![running_mean.len(), running_var.len()],
            });
        }
        if train && sx[0] < 2 {
            return Err(Error::Contract(format!(
                "batchnorm train mode requires batch >= 2, got {}",
                sx[0]
            )));
        }
        let spatial: usize = sx[2..].iter().product();
        let count = sx[0] * spatial;
        let xd = self.value(x).data();

        let (mean, var) = if train {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for bi in 0..sx[0] {
                for ci in 0..c {
                    let base = (bi * c + ci) * spatial;
                    for s in 0..spatial {
                        mean[ci] += xd[base + s];
                    }
                }
            }
            for m in mean.iter_mut() {
                *m /= count as f64;
            }
            for bi in 0..sx[0] {
                for ci in 0..c {
                    let base = (bi * c + ci) * spatial;
                    for s in 0..spatial {
                        let d = xd[base + s] - mean[ci];
                        var[ci] += d * d;
                    }
                }
            }
            for v in var.iter_mut() {
                *v /= count as f64;
            }
            (mean, var)
        } else {
            (running_mean.to_vec(), running_var.to_vec())
        };

        let gd = self.value(gamma).data().to_vec();
        let bd = self.value(beta).data().to_vec();
        let mut out = vec![0.0; xd.len()];
        for bi in 0..sx[0] {
            for ci in 0..c {
                let inv = 1.0 / (var[ci] + eps).sqrt();
                let base = (bi * c + ci) * spatial;
                for s in 0..spatial {
                    out[base + s] = gd[ci] * (xd[base + s] - mean[ci]) * inv + bd[ci];
                }
            }
        }
        let update = if train {
            let mut rm = vec![0.0; c];
            let mut rv = vec![0.0; c];
            for ci in 0..c {
                rm[ci] = (1.0 - momentum) * running_mean[ci] + momentum * mean[ci];
                rv[ci] = (1.0 - momentum) * running_var[ci] + momentum * var[ci];
            }
            Some(BnUpdate {
                running_mean: rm,
                running_var: rv,
            })
        } else {
            None
        };
        let value = Tensor::new(sx, out)?;
        let rg = self.rg(&[x, gamma, beta]);
        let id = self.push(
            "batchnorm",
            value,
            rg,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                eps,
                mean,
                var,
                train,
            },
        )?;
        Ok((id, update))
    }

    // ---- pooling and reductions ----

    pub fn maxpool2d(&mut self, x: NodeId, kernel: usize, stride: usize) -> Result<NodeId> {
        let sx = self.value(x).shape().to_vec();
        if sx.len() != 4 || kernel == 0 || stride == 0 || sx[2] < kernel || sx[3] < kernel {
            return Err(Error::Shape {
                op: "maxpool2d",
                lhs: sx,
                rhs: vec![kernel, stride],
            });
        }
        let (bsz, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let oh = (h - kernel) / stride + 1;
        let ow = (w - kernel) / stride + 1;
        let xd = self.value(x).data();
        let mut out = vec![0.0; bsz * c * oh * ow];
        let mut argmax = vec![0usize; out.len()];
        for bi in 0..bsz {
            for ci in 0..c {
                let plane = (bi * c + ci) * h * w;
                for i in 0..oh {
                    for j in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_at = 0usize;
                        for ki in 0..kernel {
                            for kj in 0..kernel {
                                let at = plane + (i * stride + ki) * w + (j * stride + kj);
                                if xd[at] > best {
                                    best = xd[at];
                                    best_at = at;
                                }
                            }
                        }
                        let o = (bi * c + ci) * oh * ow + i * ow + j;
                        out[o] = best;
                        argmax[o] = best_at;
                    }
                }
            }
        }
        let value = Tensor::new(vec![bsz, c, oh, ow], out)?;
        self.push("maxpool2d", value, self.rg(&[x]), Op::MaxPool2d { x, argmax })
    }

    /// Max over the last axis of [B, C, N]; permutation invariant.
    pub fn max_over_points(&mut self, x: NodeId) -> Result<NodeId> {
        let sx = self.value(x).shape().to_vec();
        if sx.len() != 3 {
            return Err(Error::Shape {
                op: "max_over_points",
                lhs: sx,
                rhs: vec![],
            });
        }
        let (bsz, c, n) = (sx[0], sx[1], sx[2]);
        if n == 0 {
            return Err(Error::Contract("max_over_points needs at least one point".into()));
        }
        let xd = self.value(x).data();
        let mut out = vec![0.0; bsz * c];
        let mut argmax = vec![0usize; bsz * c];
        for bi in 0..bsz {
            for ci in 0..c {
                let base = (bi * c + ci) * n;
                let mut best = f64::NEG_INFINITY;
                let mut best_at = base;
                for s in 0..n {
                    if xd[base + s] > best {
                        best = xd[base + s];
                        best_at = base + s;
                    }
                }
                out[bi * c + ci] = best;
                argmax[bi * c + ci] = best_at;
            }
        }
        let value = Tensor::new(vec![bsz, c], out)?;
        self.push("max_over_points", value, self.rg(&[x]), Op::MaxOverPoints { x, argmax })
    }

    pub fn mean_over_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let sx = self.value(x).shape().to_vec();
        if axis >= sx.len() {
            return Err(Error::Shape {
                op: "mean_over_axis",
                lhs: sx,
                rhs: vec![axis],
            });
        }
        let outer: usize = sx[..axis].iter().product();
        let len = sx[axis];
        let inner: usize = sx[axis + 1..].iter().product();
        let xd = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += xd[base + i];
                }
            }
        }
        for v in out.iter_mut() {
            *v /= len as f64;
        }
        let mut new_shape = sx.clone();
        new_shape.remove(axis);
        let value = Tensor::new(new_shape, out)?;
        self.push("mean_over_axis", value, self.rg(&[x]), Op::MeanOverAxis { x, axis })
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let sx = self.value(x).shape().to_vec();
        if axis >= sx.len() {
            return Err(Error::Shape {
                op: "softmax",
                lhs: sx,
                rhs: vec![axis],
            });
        }
        let outer: usize = sx[..axis].iter().product();
        let len = sx[axis];
        let inner: usize = sx[axis + 1..].iter().product();
        let xd = self.value(x).data();
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for l in 0..len {
                    mx = mx.max(xd[at(l)]);
                }
                let mut denom = 0.0;
                for l in 0..len {
                    let e = (xd[at(l)] - mx).exp();
                    out[at(l)] = e;
                    denom += e;
                }
                for l in 0..len {
                    out[at(l)] /= denom;
                }
            }
        }
        let value = Tensor::new(sx, out)?;
        self.push("softmax", value, self.rg(&[x]), Op::Softmax { x, axis })
    }

    /// Row softmax over [B, K] with masked columns pinned to exactly zero.
    pub fn masked_softmax_rows(&mut self, x: NodeId, mask: &[bool]) -> Result<NodeId> {
        let sx = self.value(x).shape().to_vec();
        if sx.len() != 2 || sx[1] != mask.len() {
            return Err(Error::Shape {
                op: "masked_softmax_rows",
                lhs: sx,
                rhs: vec![mask.len()],
            });
        }
        if !mask.iter().any(|m| *m) {
            return Err(Error::Contract(
                "masked softmax requires at least one unmasked column".into(),
            ));
        }
        let (bsz, k) = (sx[0], sx[1]);
        let xd = self.value(x).data();
        let mut out = vec![0.0; xd.len()];
        for bi in 0..bsz {
            let row = &xd[bi * k..(bi + 1) * k];
            let mut mx = f64::NEG_INFINITY;
            for (j, &m) in mask.iter().enumerate() {
                if m {
                    mx = mx.max(row[j]);
                }
            }
            let mut denom = 0.0;
            for (j, &m) in mask.iter().enumerate() {
                if m {
                    let e = (row[j] - mx).exp();
                    out[bi * k + j] = e;
                    denom += e;
                }
            }
            for (j, &m) in mask.iter().enumerate() {
                if m {
                    out[bi * k + j] /= denom;
                }
            }
        }
        let value = Tensor::new(sx, out)?;
        self.push(
            "masked_softmax_rows",
            value,
            self.rg(&[x]),
            Op::MaskedSoftmaxRows {
                x,
                mask: mask.to_vec(),
            },
        )
    }

    // ---- structure ----

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::Contract("concat needs at least one input".into()));
        }
        let first = self.value(inputs[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(Error::Shape {
                op: "concat",
                lhs: first,
                rhs: vec![axis],
            });
        }
        let mut axis_total = 0;
        for id in inputs {
            let s = self.value(*id).shape();
            if s.len() != first.len() {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            for (d, (&a, &b)) in first.iter().zip(s.iter()).enumerate() {
                if d != axis && a != b {
                    return Err(Error::Shape {
                        op: "concat",
                        lhs: first.clone(),
                        rhs: s.to_vec(),
                    });
                }
            }
            axis_total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut new_shape = first.clone();
        new_shape[axis] = axis_total;
        let mut out = vec![0.0; outer * axis_total * inner];
        let mut offset = 0usize;
        for id in inputs {
            let s_axis = self.value(*id).shape()[axis];
            let xd = self.value(*id).data();
            for o in 0..outer {
                for l in 0..s_axis {
                    let src = (o * s_axis + l) * inner;
                    let dst = (o * axis_total + offset + l) * inner;
                    out[dst..dst + inner].copy_from_slice(&xd[src..src + inner]);
                }
            }
            offset += s_axis;
        }
        let value = Tensor::new(new_shape, out)?;
        let rg = self.rg(inputs);
        self.push(
            "concat",
            value,
            rg,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        )
    }

    /// y[b, :] = sum_k weights[b, k] * feats[k][b, :]
    pub fn weighted_sum(&mut self, feats: &[NodeId], weights: NodeId) -> Result<NodeId> {
        let sw = self.value(weights).shape().to_vec();
        if sw.len() != 2 || sw[1] != feats.len() || feats.is_empty() {
            return Err(Error::Shape {
                op: "weighted_sum",
                lhs: sw,
                rhs: vec![feats.len()],
            });
        }
        let (bsz, k) = (sw[0], sw[1]);
        let sf = self.value(feats[0]).shape().to_vec();
        if sf.len() != 2 || sf[0] != bsz {
            return Err(Error::Shape {
                op: "weighted_sum",
                lhs: sf,
                rhs: sw,
            });
        }
        let d = sf[1];
        for f in feats {
            if self.value(*f).shape() != [bsz, d] {
                return Err(Error::Shape {
                    op: "weighted_sum",
                    lhs: vec![bsz, d],
                    rhs: self.value(*f).shape().to_vec(),
                });
            }
        }
        let wd = self.value(weights).data();
        let mut out = vec![0.0; bsz * d];
        for (ki, f) in feats.iter().enumerate() {
            let fd = self.value(*f).data();
            for bi in 0..bsz {
                let wv = wd[bi * k + ki];
                if wv == 0.0 {
                    continue;
                }
                let row = &fd[bi * d..(bi + 1) * d];
                let orow = &mut out[bi * d..(bi + 1) * d];
                for (o, &v) in orow.iter_mut().zip(row.iter()) {
                    *o += wv * v;
                }
            }
        }
        let value = Tensor::new(vec![bsz, d], out)?;
        let rg = self.rg(feats) || self.rg(&[weights]);
        self.push(
            "weighted_sum",
            value,
            rg,
            Op::WeightedSum {
                feats: feats.to_vec(),
                weights,
            },
        )
    }

    /// y[b, n, :] = pts[b, n, :] * t[b] for per-sample 3x3 transforms.
    pub fn point_transform(&mut self, pts: NodeId, t: NodeId) -> Result<NodeId> {
        let (sp, st) = (self.value(pts).shape().to_vec(), self.value(t).shape().to_vec());
        if sp.len() != 3 || sp[2] != 3 || st != [sp[0], 3, 3] {
            return Err(Error::Shape {
                op: "point_transform",
                lhs: sp,
                rhs: st,
            });
        }
        let (bsz, n) = (sp[0], sp[1]);
        let pd = self.value(pts).data();
        let td = self.value(t).data();
        let mut out = vec![0.0; pd.len()];
        for bi in 0..bsz {
            let tm = &td[bi * 9..(bi + 1) * 9];
            for ni in 0..n {
                let base = (bi * n + ni) * 3;
                for j in 0..3 {
                    out[base + j] = pd[base] * tm[j] + pd[base + 1] * tm[3 + j] + pd[base + 2] * tm[6 + j];
                }
            }
        }
        let value = Tensor::new(sp, out)?;
        self.push(
            "point_transform",
            value,
            self.rg(&[pts, t]),
            Op::PointTransform { pts, t },
        )
    }

    /// Swap the last two axes of a 3-D tensor.
    pub fn transpose12(&mut self, x: NodeId) -> Result<NodeId> {
        let sx = self.value(x).shape().to_vec();
        if sx.len() != 3 {
            return Err(Error::Shape {
                op: "transpose12",
                lhs: sx,
                rhs: vec![],
            });
        }
        let (a, b, c) = (sx[0], sx[1], sx[2]);
        let xd = self.value(x).data();
        let mut out = vec![0.0; xd.len()];
        for ai in 0..a {
            for bi in 0..b {
                for ci in 0..c {
                    out[(ai * c + ci) * b + bi] = xd[(ai * b + bi) * c + ci];
                }
            }
        }
        let value = Tensor::new(vec![a, c, b], out)?;
        self.push("transpose12", value, self.rg(&[x]), Op::Transpose12(x))
    }

    pub fn reshape(&mut self, x: NodeId, new_shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = new_shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.value(x).shape().to_vec(),
                rhs: new_shape,
            });
        }
        let value = Tensor::new(new_shape, self.value(x).data().to_vec())?;
        self.push("reshape", value, self.rg(&[x]), Op::Reshape(x))
    }

    // ---- losses and reductions to scalar ----

    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.same_shape("mse_loss", pred, target)?;
        let n = self.value(pred).numel() as f64;
        let sum: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let value = Tensor::scalar(sum / n);
        self.push("mse_loss", value, self.rg(&[pred, target]), Op::MseLoss { pred, target })
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        self.push("sum_all", value, self.rg(&[x]), Op::SumAll(x))
    }

    // ---- backward ----

    /// Reverse-topological gradient accumulation from a scalar loss.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract(
                "backward already ran on this tape; reset gradients first".into(),
            ));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        let Tape { nodes, grads, .. } = self;
        for i in (0..nodes.len()).rev() {
            if grads[i].is_none() || !nodes[i].requires_grad {
                continue;
            }
            let g = grads[i].take().expect("checked above");
            propagate(nodes, grads, i, &g);
            grads[i] = Some(g);
        }
        Ok(())
    }
}

fn accum(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: NodeId, f: impl FnOnce(&mut [f64], &[Node])) {
    if !nodes[id.0].requires_grad {
        return;
    }
    let numel = nodes[id.0].value.numel();
    let buf = grads[id.0].get_or_insert_with(|| vec![0.0; numel]);
    f(buf, nodes);
}

#[allow(clippy::needless_range_loop)]
fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
    let val = |id: NodeId| nodes[id.0].value.data();
    let shape = |id: NodeId| nodes[id.0].value.shape();
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accum(nodes, grads, *a, |buf, _| {
                for (o, &gv) in buf.iter_mut().zip(g) {
                    *o += gv;
                }
            });
            accum(nodes, grads, *b, |buf, _| {
                for (o, &gv) in buf.iter_mut().zip(g) {
                    *o += gv;
                }
            });
        }
        Op::Sub(a, b) => {
            accum(nodes, grads, *a, |buf, _| {
                for (o, &gv) in buf.iter_mut().zip(g) {
                    *o += gv;
                }
            });
            accum(nodes, grads, *b, |buf, _| {
                for (o, &gv) in buf.iter_mut().zip(g) {
                    *o -= gv;
                }
            });
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).to_vec(), val(*b).to_vec());
            accum(nodes, grads, *a, |buf, _| {
                for ((o, &gv), &y) in buf.iter_mut().zip(g).zip(bv.iter()) {
                    *o += gv * y;
                }
            });
            accum(nodes, grads, *b, |buf, _| {
                for ((o, &gv), &x) in buf.iter_mut().zip(g).zip(av.iter()) {
                    *o += gv * x;
                }
            });
        }
        Op::Matmul(a, b) => {
            let (m, k) = (shape(*a)[0], shape(*a)[1]);
            let n = shape(*b)[1];
            if nodes[a.0].requires_grad {
                let mut da = vec![0.0; m * k];
                gemm_nt(g, val(*b), m, n, k, &mut da, false);
                accum(nodes, grads, *a, |buf, _| {
                    for (o, v) in buf.iter_mut().zip(da.iter()) {
                        *o += v;
                    }
                });
            }
            if nodes[b.0].requires_grad {
                let mut db = vec![0.0; k * n];
                gemm_tn(val(*a), g, m, k, n, &mut db, false);
                accum(nodes, grads, *b, |buf, _| {
                    for (o, v) in buf.iter_mut().zip(db.iter()) {
                        *o += v;
                    }
                });
            }
        }
        Op::Linear { x, w, b } => {
            let (bsz, d_in) = (shape(*x)[0], shape(*x)[1]);
            let d_out = shape(*w)[1];
            if nodes[x.0].requires_grad {
                let mut dx = vec![0.0; bsz * d_in];
                gemm_nt(g, val(*w), bsz, d_out, d_in, &mut dx, false);
                accum(nodes, grads, *x, |buf, _| {
                    for (o, v) in buf.iter_mut().zip(dx.iter()) {
                        *o += v;
                    }
                });
            }
            if nodes[w.0].requires_grad {
                let mut dw = vec![0.0; d_in * d_out];
                gemm_tn(val(*x), g, bsz, d_in, d_out, &mut dw, false);
                accum(nodes, grads, *w, |buf, _| {
                    for (o, v) in buf.iter_mut().zip(dw.iter()) {
                        *o += v;
                    }
                });
            }
            if let Some(bias) = b {
                if nodes[bias.0].requires_grad {
                    accum(nodes, grads, *bias, |buf, _| {
                        for row in g.chunks(d_out) {
                            for (o, &gv) in buf.iter_mut().zip(row) {
                                *o += gv;
                            }
                        }
                    });
                }
            }
        }
        Op::Conv2d {
            x,
            w,
            b,
            stride,
            pad,
        } => {
            let sx = shape(*x).to_vec();
            let sw = shape(*w).to_vec();
            let (bsz, c_in, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
            let (c_out, kh, kw) = (sw[0], sw[2], sw[3]);
            let oh = (h + 2 * pad - kh) / stride + 1;
            let ow = (wd + 2 * pad - kw) / stride + 1;
            let k = c_in * kh * kw;
            let m = bsz * oh * ow;
            // dy in [M x C_out] layout.
            let mut dy_mat = vec![0.0; m * c_out];
            for bi in 0..bsz {
                for co in 0..c_out {
                    for s in 0..oh * ow {
                        dy_mat[(bi * oh * ow + s) * c_out + co] =
                            g[((bi * c_out) + co) * oh * ow + s];
                    }
                }
            }
            if nodes[w.0].requires_grad || nodes[x.0].requires_grad {
                let cols = im2col(val(*x), bsz, c_in, h, wd, kh, kw, *stride, *pad, oh, ow);
                if nodes[w.0].requires_grad {
                    let mut dw = vec![0.0; c_out * k];
                    gemm_tn(&dy_mat, &cols, m, c_out, k, &mut dw, false);
                    accum(nodes, grads, *w, |buf, _| {
                        for (o, v) in buf.iter_mut().zip(dw.iter()) {
                            *o += v;
                        }
                    });
                }
                if nodes[x.0].requires_grad {
                    let mut dcols = vec![0.0; m * k];
                    gemm_nn(&dy_mat, val(*w), m, c_out, k, &mut dcols, false);
                    let dx = col2im(&dcols, bsz, c_in, h, wd, kh, kw, *stride, *pad, oh, ow);
                    accum(nodes, grads, *x, |buf, _| {
                        for (o, v) in buf.iter_mut().zip(dx.iter()) {
                            *o += v;
                        }
                    });
                }
            }
            if let Some(bias) = b {
                if nodes[bias.0].requires_grad {
                    accum(nodes, grads, *bias, |buf, _| {
                        for bi in 0..bsz {
                            for co in 0..c_out {
                                let base = ((bi * c_out) + co) * oh * ow;
                                let mut s = 0.0;
                                for t in 0..oh * ow {
                                    s += g[base + t];
                                }
                                buf[co] += s;
                            }
                        }
                    });
                }
            }
        }
        Op::PointwiseConv1d { x, w, b } => {
            let sx = shape(*x).to_vec();
            let (bsz, c_in, n) = (sx[0], sx[1], sx[2]);
            let c_out = shape(*w)[0];
            if nodes[x.0].requires_grad {
                let mut dx = vec![0.0; bsz * c_in * n];
                for bi in 0..bsz {
                    let gyb = &g[bi * c_out * n..(bi + 1) * c_out * n];
                    let dxb = &mut dx[bi * c_in * n..(bi + 1) * c_in * n];
                    gemm_tn(val(*w), gyb, c_out, c_in, n, dxb, false);
                }
                accum(nodes, grads, *x, |buf, _| {
                    for (o, v) in buf.iter_mut().zip(dx.iter()) {
                        *o += v;
                    }
                });
            }
            if nodes[w.0].requires_grad {
                let mut dw = vec![0.0; c_out * c_in];
                for bi in 0..bsz {
                    let gyb = &g[bi * c_out * n..(bi + 1) * c_out * n];
                    let xb = &val(*x)[bi * c_in * n..(bi + 1) * c_in * n];
                    gemm_nt(gyb, xb, c_out, n, c_in, &mut dw, true);
                }
                accum(nodes, grads, *w, |buf, _| {
                    for (o, v) in buf.iter_mut().zip(dw.iter()) {
                        *o += v;
                    }
                });
            }
            if let Some(bias) = b {
                if nodes[bias.0].requires_grad {
                    accum(nodes, grads, *bias, |buf, _| {
                        for bi in 0..bsz {
                            for co in 0..c_out {
                                let row = &g[(bi * c_out + co) * n..(bi * c_out + co + 1) * n];
                                buf[co] += row.iter().sum::<f64>();
                            }
                        }
                    });
                }
            }
        }
        Op::Relu(x) => {
            let xv = val(*x).to_vec();
            accum(nodes, grads, *x, |buf, _| {
                for ((o, &gv), &xv) in buf.iter_mut().zip(g).zip(xv.iter()) {
                    if xv > 0.0 {
                        *o += gv;
                    }
                }
            });
        }
        Op::Sigmoid(x) => {
            let yv = nodes[i].value.data().to_vec();
            accum(nodes, grads, *x, |buf, _| {
                for ((o, &gv), &y) in buf.iter_mut().zip(g).zip(yv.iter()) {
                    *o += gv * y * (1.0 - y);
                }
            });
        }
        Op::Tanh(x) => {
            let yv = nodes[i].value.data().to_vec();
            accum(nodes, grads, *x, |buf, _| {
                for ((o, &gv), &y) in buf.iter_mut().zip(g).zip(yv.iter()) {
                    *o += gv * (1.0 - y * y);
                }
            });
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            eps,
            mean,
            var,
            train,
        } => {
            let sx = shape(*x).to_vec();
            let c = sx[1];
            let spatial: usize = sx[2..].iter().product();
            let bsz = sx[0];
            let count = (bsz * spatial) as f64;
            let xv = val(*x);
            let gv = val(*gamma);
            // Per-channel sums of g and g*xhat, shared by all three grads.
            let mut sum_g = vec![0.0; c];
            let mut sum_gx = vec![0.0; c];
            for bi in 0..bsz {
                for ci in 0..c {
                    let inv = 1.0 / (var[ci] + eps).sqrt();
                    let base = (bi * c + ci) * spatial;
                    for s in 0..spatial {
                        let xhat = (xv[base + s] - mean[ci]) * inv;
                        sum_g[ci] += g[base + s];
                        sum_gx[ci] += g[base + s] * xhat;
                    }
                }
            }
            if nodes[beta.0].requires_grad {
                accum(nodes, grads, *beta, |buf, _| {
                    for (o, v) in buf.iter_mut().zip(sum_g.iter()) {
                        *o += v;
                    }
                });
            }
            if nodes[gamma.0].requires_grad {
                accum(nodes, grads, *gamma, |buf, _| {
                    for (o, v) in buf.iter_mut().zip(sum_gx.iter()) {
                        *o += v;
                    }
                });
            }
            if nodes[x.0].requires_grad {
                let mut dx = vec![0.0; xv.len()];
                for bi in 0..bsz {
                    for ci in 0..c {
                        let inv = 1.0 / (var[ci] + eps).sqrt();
                        let base = (bi * c + ci) * spatial;
                        for s in 0..spatial {
                            if *train {
                                let xhat = (xv[base + s] - mean[ci]) * inv;
                                dx[base + s] = gv[ci] * inv
                                    * (g[base + s]
                                        - sum_g[ci] / count
                                        - xhat * sum_gx[ci] / count);
                            } else {
                                dx[base + s] = gv[ci] * inv * g[base + s];
                            }
                        }
                    }
                }
                accum(nodes, grads, *x, |buf, _| {
                    for (o, v) in buf.iter_mut().zip(dx.iter()) {
                        *o += v;
                    }
                });
            }
        }
        Op::MaxPool2d { x, argmax } | Op::MaxOverPoints { x, argmax } => {
            accum(nodes, grads, *x, |buf, _| {
                for (o, &at) in g.iter().zip(argmax.iter()) {
                    buf[at] += o;
                }
            });
        }
        Op::MeanOverAxis { x, axis } => {
            let sx = shape(*x).to_vec();
            let outer: usize = sx[..*axis].iter().product();
            let len = sx[*axis];
            let inner: usize = sx[*axis + 1..].iter().product();
            accum(nodes, grads, *x, |buf, _| {
                let scale = 1.0 / len as f64;
                for o in 0..outer {
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        for t in 0..inner {
                            buf[base + t] += g[o * inner + t] * scale;
                        }
                    }
                }
            });
        }
        Op::Softmax { x, axis } => {
            let sx = shape(*x).to_vec();
            let outer: usize = sx[..*axis].iter().product();
            let len = sx[*axis];
            let inner: usize = sx[*axis + 1..].iter().product();
            let yv = nodes[i].value.data().to_vec();
            accum(nodes, grads, *x, |buf, _| {
                for o in 0..outer {
                    for t in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + t;
                        let mut dot = 0.0;
                        for l in 0..len {
                            dot += g[at(l)] * yv[at(l)];
                        }
                        for l in 0..len {
                            buf[at(l)] += yv[at(l)] * (g[at(l)] - dot);
                        }
                    }
                }
            });
        }
        Op::MaskedSoftmaxRows { x, mask } => {
            let sx = shape(*x).to_vec();
            let (bsz, k) = (sx[0], sx[1]);
            let yv = nodes[i].value.data().to_vec();
            let mask = mask.clone();
            accum(nodes, grads, *x, |buf, _| {
                for bi in 0..bsz {
                    let mut dot = 0.0;
                    for j in 0..k {
                        if mask[j] {
                            dot += g[bi * k + j] * yv[bi * k + j];
                        }
                    }
                    for j in 0..k {
                        if mask[j] {
                            buf[bi * k + j] += yv[bi * k + j] * (g[bi * k + j] - dot);
                        }
                    }
                }
            });
        }
        Op::Concat { inputs, axis } => {
            let out_shape = nodes[i].value.shape().to_vec();
            let outer: usize = out_shape[..*axis].iter().product();
            let inner: usize = out_shape[*axis + 1..].iter().product();
            let axis_total = out_shape[*axis];
            let mut offset = 0usize;
            for id in inputs {
                let s_axis = shape(*id)[*axis];
                if nodes[id.0].requires_grad {
                    let off = offset;
                    accum(nodes, grads, *id, |buf, _| {
                        for o in 0..outer {
                            for l in 0..s_axis {
                                let src = (o * axis_total + off + l) * inner;
                                let dst = (o * s_axis + l) * inner;
                                for t in 0..inner {
                                    buf[dst + t] += g[src + t];
                                }
                            }
                        }
                    });
                }
                offset += s_axis;
            }
        }
        Op::WeightedSum { feats, weights } => {
            let sw = shape(*weights).to_vec();
            let (bsz, k) = (sw[0], sw[1]);
            let d = shape(feats[0])[1];
            let wv = val(*weights).to_vec();
            for (ki, f) in feats.iter().enumerate() {
                if nodes[f.0].requires_grad {
                    accum(nodes, grads, *f, |buf, _| {
                        for bi in 0..bsz {
                            let wk = wv[bi * k + ki];
                            if wk == 0.0 {
                                continue;
                            }
                            for t in 0..d {
                                buf[bi * d + t] += g[bi * d + t] * wk;
                            }
                        }
                    });
                }
            }
            if nodes[weights.0].requires_grad {
                let fvals: Vec<&[f64]> = feats.iter().map(|f| val(*f)).collect();
                accum(nodes, grads, *weights, |buf, _| {
                    for bi in 0..bsz {
                        for (ki, fd) in fvals.iter().enumerate() {
                            let mut dot = 0.0;
                            for t in 0..d {
                                dot += g[bi * d + t] * fd[bi * d + t];
                            }
                            buf[bi * k + ki] += dot;
                        }
                    }
                });
            }
        }
        Op::PointTransform { pts, t } => {
            let sp = shape(*pts).to_vec();
            let (bsz, n) = (sp[0], sp[1]);
            let pv = val(*pts);
            let tv = val(*t);
            if nodes[pts.0].requires_grad {
                let mut dp = vec![0.0; pv.len()];
                for bi in 0..bsz {
                    let tm = &tv[bi * 9..(bi + 1) * 9];
                    for ni in 0..n {
                        let base = (bi * n + ni) * 3;
                        for ii in 0..3 {
                            dp[base + ii] += g[base] * tm[ii * 3]
                                + g[base + 1] * tm[ii * 3 + 1]
                                + g[base + 2] * tm[ii * 3 + 2];
                        }
                    }
                }
                accum(nodes, grads, *pts, |buf, _| {
                    for (o, v) in buf.iter_mut().zip(dp.iter()) {
                        *o += v;
                    }
                });
            }
            if nodes[t.0].requires_grad {
                let mut dt = vec![0.0; tv.len()];
                for bi in 0..bsz {
                    for ni in 0..n {
                        let base = (bi * n + ni) * 3;
                        for ii in 0..3 {
                            for jj in 0..3 {
                                dt[bi * 9 + ii * 3 + jj] += pv[base + ii] * g[base + jj];
                            }
                        }
                    }
                }
                accum(nodes, grads, *t, |buf, _| {
                    for (o, v) in buf.iter_mut().zip(dt.iter()) {
                        *o += v;
                    }
                });
            }
        }
        Op::Reshape(x) => {
            accum(nodes, grads, *x, |buf, _| {
                for (o, &gv) in buf.iter_mut().zip(g) {
                    *o += gv;
                }
            });
        }
        Op::Transpose12(x) => {
            let sx = shape(*x).to_vec();
            let (a, b, c) = (sx[0], sx[1], sx[2]);
            accum(nodes, grads, *x, |buf, _| {
                for ai in 0..a {
                    for bi in 0..b {
                        for ci in 0..c {
                            buf[(ai * b + bi) * c + ci] += g[(ai * c + ci) * b + bi];
                        }
                    }
                }
            });
        }
        Op::MseLoss { pred, target } => {
            let n = nodes[pred.0].value.numel() as f64;
            let pv = val(*pred).to_vec();
            let tv = val(*target).to_vec();
            let g0 = g[0];
            if nodes[pred.0].requires_grad {
                accum(nodes, grads, *pred, |buf, _| {
                    for ((o, &p), &t) in buf.iter_mut().zip(pv.iter()).zip(tv.iter()) {
                        *o += g0 * 2.0 * (p - t) / n;
                    }
                });
            }
            if nodes[target.0].requires_grad {
                accum(nodes, grads, *target, |buf, _| {
                    for ((o, &p), &t) in buf.iter_mut().zip(pv.iter()).zip(tv.iter()) {
                        *o -= g0 * 2.0 * (p - t) / n;
                    }
                });
            }
        }
        Op::SumAll(x) => {
            let g0 = g[0];
            accum(nodes, grads, *x, |buf, _| {
                for o in buf.iter_mut() {
                    *o += g0;
                }
            });
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    bsz: usize,
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let k = c_in * kh * kw;
    let mut cols = vec![0.0; bsz * oh * ow * k];
    for bi in 0..bsz {
        for i in 0..oh {
            for j in 0..ow {
                let row = ((bi * oh + i) * ow + j) * k;
                for ci in 0..c_in {
                    let plane = (bi * c_in + ci) * h * w;
                    for ki in 0..kh {
                        let ih = (i * stride + ki) as isize - pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let src = plane + ih as usize * w;
                        let dst = row + ci * kh * kw + ki * kw;
                        for kj in 0..kw {
                            let iw = (j * stride + kj) as isize - pad as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            cols[dst + kj] = x[src + iw as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    bsz: usize,
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let k = c_in * kh * kw;
    let mut x = vec![0.0; bsz * c_in * h * w];
    for bi in 0..bsz {
        for i in 0..oh {
            for j in 0..ow {
                let row = ((bi * oh + i) * ow + j) * k;
                for ci in 0..c_in {
                    let plane = (bi * c_in + ci) * h * w;
                    for ki in 0..kh {
                        let ih = (i * stride + ki) as isize - pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let dst = plane + ih as usize * w;
                        let src = row + ci * kh * kw + ki * kw;
                        for kj in 0..kw {
                            let iw = (j * stride + kj) as isize - pad as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            x[dst + iw as usize] += cols[src + kj];
                        }
                    }
                }
            }
        }
    }
    x
}
