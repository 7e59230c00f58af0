//! Append-only computation graph with reverse-mode differentiation.
//!
//! Every operation evaluates eagerly and records a node whose inputs are
//! earlier nodes, so node order is already a topological order. `backward`
//! walks the nodes once in reverse and never mutates the graph.

use std::collections::BTreeMap;

use crate::autodiff::conv::{self, ConvGeometry};
use crate::autodiff::norm::{self, BatchNormMode, BatchNormOptions, BatchStats, RunningStats};
use crate::autodiff::sample;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{compensated_sum, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<S> {
    Input,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, S),
    AddBias(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumSq(NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Concat(Vec<NodeId>),
    Narrow {
        input: NodeId,
        start: usize,
    },
    Reshape(NodeId),
    Stack(Vec<NodeId>),
    Select {
        input: NodeId,
        index: usize,
    },
    ConvTranspose {
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        geom: ConvGeometry,
    },
    BatchNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<S>,
        inv_std: Vec<S>,
        mode: BatchNormMode,
    },
    Bilinear {
        image: NodeId,
        coords: NodeId,
    },
    SmoothnessSq(NodeId),
}

#[derive(Debug, Clone)]
struct Node<S> {
    op: Op<S>,
    value: Tensor<S>,
    requires_grad: bool,
}

/// Gradients of a scalar root with respect to every differentiable leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap<S> {
    grads: BTreeMap<NodeId, Tensor<S>>,
}

impl<S: Scalar> GradientMap<S> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.grads.get(&id)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<S>> {
        self.grads.remove(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Tensor<S>)> {
        self.grads.iter().map(|(&k, v)| (k, v))
    }
}

#[derive(Debug, Clone, Default)]
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::shape(op, format!("{a:?}"), b))
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, op: Op<S>, value: Tensor<S>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i.0].requires_grad)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor<S>) -> NodeId {
        self.push(Op::Input, value, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor<S>) -> NodeId {
        self.push(Op::Input, value, false)
    }

    /// Leaf or constant depending on `differentiable`.
    pub fn input(&mut self, value: Tensor<S>, differentiable: bool) -> NodeId {
        self.push(Op::Input, value, differentiable)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(S, S) -> S,
        op: Op<S>,
    ) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(name, va.shape(), vb.shape())?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_vec(va.shape(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(op, value, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("subtract", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("multiply", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: S) -> NodeId {
        let value = self.value(a).map(|v| v * factor);
        let rg = self.any_grad(&[a]);
        self.push(Op::Scale(a, factor), value, rg)
    }

    /// Adds a vector along the last axis of `x`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let c = *vx.shape().last().unwrap();
        if vb.shape() != [c] {
            return Err(Error::shape("add_bias", format!("[{c}]"), vb.shape()));
        }
        let mut data = vx.data().to_vec();
        for row in data.chunks_exact_mut(c) {
            for (v, &b) in row.iter_mut().zip(vb.data()) {
                *v = *v + b;
            }
        }
        let value = Tensor::from_vec(vx.shape(), data)?;
        let rg = self.any_grad(&[x, bias]);
        Ok(self.push(Op::AddBias(x, bias), value, rg))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.len() != 2 {
            return Err(Error::shape("matmul", "rank-2 left operand", sa));
        }
        if sb.len() != 2 || sb[0] != sa[1] {
            return Err(Error::shape("matmul", format!("[{}, N]", sa[1]), sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = S::gemm_new(m, k, n, va.data(), k as isize, 1, vb.data(), n as isize, 1);
        let value = Tensor::from_vec(&[m, n], out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), value, rg))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = compensated_sum(self.value(a).data().iter().copied());
        let rg = self.any_grad(&[a]);
        self.push(Op::Sum(a), Tensor::scalar(s), rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let s = compensated_sum(v.data().iter().copied()) / S::from_usize(v.numel()).unwrap();
        let rg = self.any_grad(&[a]);
        self.push(Op::Mean(a), Tensor::scalar(s), rg)
    }

    pub fn sum_sq(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).sum_sq();
        let rg = self.any_grad(&[a]);
        self.push(Op::SumSq(a), Tensor::scalar(s), rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|v| if v > S::zero() { v } else { S::zero() });
        let rg = self.any_grad(&[a]);
        self.push(Op::Relu(a), value, rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|v| v.tanh());
        let rg = self.any_grad(&[a]);
        self.push(Op::Tanh(a), value, rg)
    }

    /// Concatenates along the last axis; leading dimensions must agree.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concatenate", "no operands"))?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let rows: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::shape("concatenate", format!("{lead:?} + [*]"), s));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::from_vec(&shape, data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(Op::Concat(parts.to_vec()), value, rg))
    }

    /// `len` entries of the last axis starting at `start`.
    pub fn narrow(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        let w = *s.last().unwrap();
        if len == 0 || start + len > w {
            return Err(Error::invalid(
                "narrow",
                format!("range {start}..{} outside last axis of {s:?}", start + len),
            ));
        }
        let data: Vec<S> = self
            .value(a)
            .data()
            .chunks_exact(w)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = s;
        *shape.last_mut().unwrap() = len;
        let value = Tensor::from_vec(&shape, data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(Op::Narrow { input: a, start }, value, rg))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(Op::Reshape(a), value, rg))
    }

    /// Stacks equally shaped nodes along a new leading axis.
    pub fn stack(&mut self, items: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<Tensor<S>> = items.iter().map(|&i| self.value(i).clone()).collect();
        let value = Tensor::stack(&tensors)?;
        let rg = self.any_grad(items);
        Ok(self.push(Op::Stack(items.to_vec()), value, rg))
    }

    /// Entry `index` of the leading axis.
    pub fn select(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        let v = self.value(a);
        if v.rank() < 2 || index >= v.shape()[0] {
            return Err(Error::invalid(
                "select",
                format!("index {index} out of range for shape {:?}", v.shape()),
            ));
        }
        let value = v.index_axis0(index);
        let rg = self.any_grad(&[a]);
        Ok(self.push(Op::Select { input: a, index }, value, rg))
    }

    /// Transposed convolution with symmetric padding.
    pub fn conv_transpose2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
        bias: Option<NodeId>,
    ) -> Result<NodeId> {
        let geom = ConvGeometry::symmetric(self.shape(input), self.shape(kernel), stride, padding)?;
        self.conv_transpose_with(input, kernel, bias, geom)
    }

    /// Transposed convolution with an explicit crop and output size.
    pub fn conv_transpose2d_cropped(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        crop: usize,
        out_hw: (usize, usize),
        bias: Option<NodeId>,
    ) -> Result<NodeId> {
        let geom = ConvGeometry::cropped(
            self.shape(input),
            self.shape(kernel),
            stride,
            crop,
            out_hw.0,
            out_hw.1,
        )?;
        self.conv_transpose_with(input, kernel, bias, geom)
    }

    fn conv_transpose_with(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        geom: ConvGeometry,
    ) -> Result<NodeId> {
        if let Some(b) = bias {
            if self.shape(b) != [geom.out_c] {
                return Err(Error::shape("conv_transpose2d", format!("bias [{}]", geom.out_c), self.shape(b)));
            }
        }
        let data = conv::forward(
            &geom,
            self.value(input).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
        );
        let shape = if self.value(input).rank() == 3 {
            vec![geom.out_h, geom.out_w, geom.out_c]
        } else {
            vec![geom.batch, geom.out_h, geom.out_w, geom.out_c]
        };
        let value = Tensor::from_vec(&shape, data)?;
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        let rg = self.any_grad(&deps);
        Ok(self.push(
            Op::ConvTranspose {
                input,
                kernel,
                bias,
                geom,
            },
            value,
            rg,
        ))
    }

    fn check_channels(&self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<usize> {
        let c = *self.shape(x).last().unwrap();
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(Error::shape("batch_norm", format!("[{c}] channel parameters"), self.shape(p)));
            }
        }
        Ok(c)
    }

    /// Training-mode batch norm; returns the batch statistics it normalized with.
    pub fn batch_norm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        epsilon: f64,
    ) -> Result<(NodeId, BatchStats<S>)> {
        let c = self.check_channels(x, gamma, beta)?;
        let stats = norm::batch_statistics(self.value(x).data(), c);
        let n = norm::normalize(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            &stats.mean,
            &stats.var,
            epsilon,
        );
        let value = Tensor::from_vec(self.shape(x), n.out)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        let id = self.push(
            Op::BatchNorm {
                input: x,
                gamma,
                beta,
                xhat: n.xhat,
                inv_std: n.inv_std,
                mode: BatchNormMode::Train,
            },
            value,
            rg,
        );
        Ok((id, stats))
    }

    /// Inference-mode batch norm with fixed statistics.
    pub fn batch_norm_infer(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running: &RunningStats<S>,
        epsilon: f64,
    ) -> Result<NodeId> {
        let c = self.check_channels(x, gamma, beta)?;
        if running.mean.shape() != [c] || running.var.shape() != [c] {
            return Err(Error::shape("batch_norm", format!("[{c}] running statistics"), running.mean.shape()));
        }
        let n = norm::normalize(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            running.mean.data(),
            running.var.data(),
            epsilon,
        );
        let value = Tensor::from_vec(self.shape(x), n.out)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            Op::BatchNorm {
                input: x,
                gamma,
                beta,
                xhat: n.xhat,
                inv_std: n.inv_std,
                mode: BatchNormMode::Infer,
            },
            value,
            rg,
        ))
    }

    /// Batch norm that also maintains `running` in training mode.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mode: BatchNormMode,
        running: &mut RunningStats<S>,
        options: BatchNormOptions,
    ) -> Result<NodeId> {
        match mode {
            BatchNormMode::Train => {
                let (id, stats) = self.batch_norm_train(x, gamma, beta, options.epsilon)?;
                running.update(&stats, options.momentum);
                Ok(id)
            }
            BatchNormMode::Infer => self.batch_norm_infer(x, gamma, beta, running, options.epsilon),
        }
    }

    /// Samples an `H x W x C` image at `OH x OW x 2` continuous `(x, y)` positions.
    pub fn bilinear_sample(&mut self, image: NodeId, coords: NodeId) -> Result<NodeId> {
        let si = self.shape(image).to_vec();
        let sc = self.shape(coords).to_vec();
        if si.len() != 3 {
            return Err(Error::shape("bilinear_sample", "image H x W x C", &si));
        }
        if sc.len() != 3 || sc[2] != 2 {
            return Err(Error::shape("bilinear_sample", "coords OH x OW x 2", &sc));
        }
        let data = sample::forward(self.value(image).data(), (si[0], si[1], si[2]), self.value(coords).data());
        let value = Tensor::from_vec(&[sc[0], sc[1], si[2]], data)?;
        let rg = self.any_grad(&[image, coords]);
        Ok(self.push(Op::Bilinear { image, coords }, value, rg))
    }

    /// Sum of squared forward differences along the two spatial axes of a
    /// `... x H x W x C` tensor (no wrap-around).
    pub fn smoothness_sq(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if s.len() < 3 {
            return Err(Error::shape("smoothness", "... x H x W x C", &s));
        }
        let v = self.value(a).data();
        let mut squares = Vec::new();
        for_each_difference(&s, |i, j| {
            let d = v[j] - v[i];
            squares.push(d * d);
        });
        let total = compensated_sum(squares);
        let rg = self.any_grad(&[a]);
        Ok(self.push(Op::SmoothnessSq(a), Tensor::scalar(total), rg))
    }

    /// Reverse-mode gradients of a single-element `root` with respect to
    /// every differentiable leaf. Unreached leaves get exact zeros.
    pub fn backward(&self, root: NodeId) -> Result<GradientMap<S>> {
        let rv = self.value(root);
        if rv.numel() != 1 {
            return Err(Error::shape("backward", "scalar root", rv.shape()));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![S::one()]);
        let mut out = BTreeMap::new();

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                if matches!(node.op, Op::Input) {
                    out.insert(NodeId(i), Tensor::zeros(node.value.shape()));
                }
                continue;
            };
            self.propagate(node, i, g, &mut grads, &mut out)?;
        }
        // Leaves created after the root cannot influence it.
        for (i, node) in self.nodes.iter().enumerate().skip(root.0 + 1) {
            if node.requires_grad && matches!(node.op, Op::Input) {
                out.insert(NodeId(i), Tensor::zeros(node.value.shape()));
            }
        }
        Ok(GradientMap { grads: out })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(
        &self,
        node: &Node<S>,
        index: usize,
        g: Vec<S>,
        grads: &mut [Option<Vec<S>>],
        out: &mut BTreeMap<NodeId, Tensor<S>>,
    ) -> Result<()> {
        let mut acc = |id: NodeId, delta: Vec<S>| {
            if !self.wants(id) {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => {
                    for (e, d) in existing.iter_mut().zip(delta) {
                        *e = *e + d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Input => {
                out.insert(NodeId(index), Tensor::from_vec(node.value.shape(), g)?);
            }
            Op::Add(a, b) => {
                if self.wants(*b) {
                    acc(*b, g.clone());
                }
                acc(*a, g);
            }
            Op::Sub(a, b) => {
                if self.wants(*b) {
                    acc(*b, g.iter().map(|&v| -v).collect());
                }
                acc(*a, g);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    acc(*a, g.iter().zip(vb).map(|(&gi, &y)| gi * y).collect());
                }
                if self.wants(*b) {
                    acc(*b, g.iter().zip(va).map(|(&gi, &x)| gi * x).collect());
                }
            }
            Op::Scale(a, f) => acc(*a, g.iter().map(|&v| v * *f).collect()),
            Op::AddBias(x, b) => {
                if self.wants(*b) {
                    let c = self.shape(*b)[0];
                    acc(*b, conv::bias_grad(&g, c));
                }
                acc(*x, g);
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if self.wants(*a) {
                    // dA = G B^T
                    acc(*a, S::gemm_new(m, n, k, &g, n as isize, 1, vb.data(), 1, n as isize));
                }
                if self.wants(*b) {
                    // dB = A^T G
                    acc(*b, S::gemm_new(k, m, n, va.data(), 1, k as isize, &g, n as isize, 1));
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                acc(*a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                acc(*a, vec![g[0] / S::from_usize(n).unwrap(); n]);
            }
            Op::SumSq(a) => {
                let two = S::one() + S::one();
                acc(*a, self.value(*a).data().iter().map(|&x| two * x * g[0]).collect());
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                acc(
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(&gi, &xi)| if xi > S::zero() { gi } else { S::zero() })
                        .collect(),
                );
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                acc(*a, g.iter().zip(y).map(|(&gi, &yi)| gi * (S::one() - yi * yi)).collect());
            }
            Op::Concat(parts) => {
                let widths: Vec<usize> = parts.iter().map(|&p| *self.shape(p).last().unwrap()).collect();
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    if self.wants(p) {
                        let d: Vec<S> = g
                            .chunks_exact(total)
                            .flat_map(|row| row[offset..offset + w].iter().copied())
                            .collect();
                        acc(p, d);
                    }
                    offset += w;
                }
            }
            Op::Narrow { input, start } => {
                let w = *self.shape(*input).last().unwrap();
                let len = *node.value.shape().last().unwrap();
                let mut d = vec![S::zero(); self.value(*input).numel()];
                for (row, grow) in d.chunks_exact_mut(w).zip(g.chunks_exact(len)) {
                    row[*start..start + len].copy_from_slice(grow);
                }
                acc(*input, d);
            }
            Op::Reshape(a) => acc(*a, g),
            Op::Stack(items) => {
                let inner = self.value(items[0]).numel();
                for (k, &it) in items.iter().enumerate() {
                    if self.wants(it) {
                        acc(it, g[k * inner..(k + 1) * inner].to_vec());
                    }
                }
            }
            Op::Select { input, index } => {
                let inner = node.value.numel();
                let mut d = vec![S::zero(); self.value(*input).numel()];
                d[index * inner..(index + 1) * inner].copy_from_slice(&g);
                acc(*input, d);
            }
            Op::ConvTranspose {
                input,
                kernel,
                bias,
                geom,
            } => {
                if let Some(b) = bias {
                    if self.wants(*b) {
                        acc(*b, conv::bias_grad(&g, geom.out_c));
                    }
                }
                let (dx, dk) = conv::backward(
                    geom,
                    self.value(*input).data(),
                    self.value(*kernel).data(),
                    &g,
                    self.wants(*input),
                    self.wants(*kernel),
                );
                if let Some(dx) = dx {
                    acc(*input, dx);
                }
                if let Some(dk) = dk {
                    acc(*kernel, dk);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            } => {
                let c = inv_std.len();
                if self.wants(*gamma) || self.wants(*beta) {
                    let (dg, db) = norm::affine_grads(&g, xhat, c);
                    acc(*gamma, dg);
                    acc(*beta, db);
                }
                if self.wants(*input) {
                    let gam = self.value(*gamma).data();
                    let dx = match mode {
                        BatchNormMode::Train => norm::train_input_grad(&g, xhat, inv_std, gam),
                        BatchNormMode::Infer => g
                            .chunks_exact(c)
                            .flat_map(|row| (0..c).map(move |ch| row[ch] * gam[ch] * inv_std[ch]))
                            .collect(),
                    };
                    acc(*input, dx);
                }
            }
            Op::Bilinear { image, coords } => {
                let si = self.shape(*image);
                let (di, dc) = sample::backward(
                    self.value(*image).data(),
                    (si[0], si[1], si[2]),
                    self.value(*coords).data(),
                    &g,
                    self.wants(*image),
                    self.wants(*coords),
                );
                if let Some(di) = di {
                    acc(*image, di);
                }
                if let Some(dc) = dc {
                    acc(*coords, dc);
                }
            }
            Op::SmoothnessSq(a) => {
                let v = self.value(*a).data();
                let mut d = vec![S::zero(); v.len()];
                let two_g = (S::one() + S::one()) * g[0];
                for_each_difference(self.shape(*a), |i, j| {
                    let t = two_g * (v[j] - v[i]);
                    d[j] = d[j] + t;
                    d[i] = d[i] - t;
                });
                acc(*a, d);
            }
        }
        Ok(())
    }
}

/// Calls `f(i, j)` for every forward-difference pair `v[j] - v[i]`, first
/// along the width axis, then along the height axis, in row-major order.
fn for_each_difference(shape: &[usize], mut f: impl FnMut(usize, usize)) {
    let r = shape.len();
    let (h, w, c) = (shape[r - 3], shape[r - 2], shape[r - 1]);
    let batch: usize = shape[..r - 3].iter().product();
    for n in 0..batch {
        let base = n * h * w * c;
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let i = base + (y * w + x) * c + ch;
                    if x + 1 < w {
                        f(i, i + c);
                    }
                    if y + 1 < h {
                        f(i, i + w * c);
                    }
                }
            }
        }
    }
}
