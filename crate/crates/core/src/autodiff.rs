//! Reverse-mode automatic differentiation over a Wengert tape.
//!
//! Every operation appends a node holding its forward value and whatever
//! context the backward pass needs. Node ids are assigned in append order, so
//! inputs always precede their consumers and the backward sweep is a single
//! reverse walk over the node list.

use crate::error::{Error, Result};
use crate::kernels::{conv_out_extent, gemm, ConvGeom};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, kernel: Var, geom: ConvGeom, batch: usize, out_channels: usize },
    MatMul { a: Var, b: Var },
    AddBias { x: Var, bias: Var },
    Relu { x: Var },
    MaxPool2 { x: Var, winners: Vec<usize> },
    Reshape { x: Var },
    Softmax { x: Var },
    LogClamped { x: Var, eps: f64 },
    MulConst { x: Var, factor: Tensor },
    Sum { x: Var },
    Scale { x: Var, factor: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
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

    /// Trainable leaf: gradients are reported for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Cross-correlation of `N×Cin×H×W` input with a `Cout×Cin×kh×kw` kernel.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (x, k) = (self.value(input), self.value(kernel));
        if x.rank() != 4 || k.rank() != 4 {
            return Err(Error::shape(format!(
                "conv2d expects rank-4 input and kernel, got {:?} and {:?}",
                x.shape(),
                k.shape()
            )));
        }
        let &[batch, channels, height, width] = x.shape() else { unreachable!() };
        let &[out_channels, kc, kh, kw] = k.shape() else { unreachable!() };
        if kc != channels {
            return Err(Error::shape(format!("conv2d input has {channels} channels, kernel expects {kc}")));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        if kh > height + 2 * padding || kw > width + 2 * padding {
            return Err(Error::shape(format!(
                "kernel {kh}×{kw} larger than padded input {}×{}",
                height + 2 * padding,
                width + 2 * padding
            )));
        }
        let geom = ConvGeom {
            channels,
            height,
            width,
            kh,
            kw,
            stride,
            padding,
            out_h: conv_out_extent(height, kh, stride, padding),
            out_w: conv_out_extent(width, kw, stride, padding),
        };
        let (plen, pos) = (geom.patch_len(), geom.positions());
        let in_len = channels * height * width;
        let mut out = vec![0.0; batch * out_channels * pos];
        let mut cols = vec![0.0; plen * pos];
        for n in 0..batch {
            geom.im2col(&x.data()[n * in_len..(n + 1) * in_len], &mut cols);
            gemm(
                out_channels,
                plen,
                pos,
                k.data(),
                (plen, 1),
                &cols,
                (pos, 1),
                0.0,
                &mut out[n * out_channels * pos..(n + 1) * out_channels * pos],
            );
        }
        let value = Tensor::new([batch, out_channels, geom.out_h, geom.out_w], out)?;
        let rg = self.any_grad(&[input, kernel]);
        Ok(self.push(value, Op::Conv2d { input, kernel, geom, batch, out_channels }, rg))
    }

    /// `[m×k] · [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::shape(format!("matmul of {:?} and {:?}", av.shape(), bv.shape())));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), (k, 1), bv.data(), (n, 1), 0.0, &mut out);
        let value = Tensor::new([m, n], out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul { a, b }, rg))
    }

    /// Adds `bias[c]` to every element of channel `c` (axis 1).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if xv.rank() < 2 || bv.rank() != 1 || bv.numel() != xv.shape()[1] {
            return Err(Error::shape(format!("bias {:?} does not match {:?}", bv.shape(), xv.shape())));
        }
        let inner: usize = xv.shape()[2..].iter().product();
        let channels = xv.shape()[1];
        let mut out = xv.data().to_vec();
        for (i, chunk) in out.chunks_exact_mut(inner).enumerate() {
            let b = bv.data()[i % channels];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        let value = Tensor::new(xv.shape(), out)?;
        let rg = self.any_grad(&[x, bias]);
        Ok(self.push(value, Op::AddBias { x, bias }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = xv.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(xv.shape(), out).expect("same shape");
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Relu { x }, rg)
    }

    /// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let &[n, c, h, w] = xv.shape() else {
            return Err(Error::shape(format!("max_pool2 expects rank 4, got {:?}", xv.shape())));
        };
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(Error::shape(format!("max_pool2 on {h}×{w} plane")));
        }
        let data = xv.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut winners = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                    out.push(data[best]);
                    winners.push(best);
                }
            }
        }
        let value = Tensor::new([n, c, oh, ow], out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::MaxPool2 { x, winners }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Reshape { x }, rg))
    }

    /// Collapses everything after the leading axis.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape();
        let features = shape[1..].iter().product();
        let n = shape[0];
        self.reshape(x, [n, features])
    }

    /// Row-wise softmax of an `N×C` matrix, stabilized by subtracting each
    /// row's maximum.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::shape(format!("softmax expects rank 2, got {:?}", xv.shape())));
        }
        let value = softmax_rows(xv);
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Softmax { x }, rg))
    }

    /// `ln(max(x, eps))`; the gradient is zero where the clamp is active.
    pub fn log_clamped(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let out = xv.data().iter().map(|&v| v.max(eps).ln()).collect();
        let value = Tensor::new(xv.shape(), out).expect("same shape");
        let rg = self.any_grad(&[x]);
        self.push(value, Op::LogClamped { x, eps }, rg)
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, x: Var, factor: Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != factor.shape() {
            return Err(Error::shape(format!("mul_const {:?} by {:?}", xv.shape(), factor.shape())));
        }
        let out = xv.data().iter().zip(factor.data()).map(|(a, b)| a * b).collect();
        let value = Tensor::new(xv.shape(), out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::MulConst { x, factor }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Sum { x }, rg)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let xv = self.value(x);
        let out = xv.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(xv.shape(), out).expect("same shape");
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Scale { x, factor }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Propagates `d loss / d node` for every node that requires a gradient.
    ///
    /// The seed gradient at `loss` is 1.0. Nodes that do not require
    /// gradients get `None`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::shape(format!("backward from non-scalar node of shape {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                }
                Op::Conv2d { input, kernel, geom, batch, out_channels } => {
                    let (x, k) = (self.value(*input), self.value(*kernel));
                    let (plen, pos) = (geom.patch_len(), geom.positions());
                    let in_len = geom.channels * geom.height * geom.width;
                    let out_len = out_channels * pos;
                    let want_x = self.requires_grad(*input);
                    let want_k = self.requires_grad(*kernel);
                    let mut dk = vec![0.0; k.numel()];
                    let mut dx = vec![0.0; if want_x { x.numel() } else { 0 }];
                    let mut cols = vec![0.0; plen * pos];
                    let mut dcols = vec![0.0; if want_x { plen * pos } else { 0 }];
                    for n in 0..*batch {
                        let gn = &g.data()[n * out_len..(n + 1) * out_len];
                        if want_k {
                            geom.im2col(&x.data()[n * in_len..(n + 1) * in_len], &mut cols);
                            gemm(*out_channels, pos, plen, gn, (pos, 1), &cols, (1, pos), 1.0, &mut dk);
                        }
                        if want_x {
                            gemm(plen, *out_channels, pos, k.data(), (1, plen), gn, (pos, 1), 0.0, &mut dcols);
                            geom.col2im_add(&dcols, &mut dx[n * in_len..(n + 1) * in_len]);
                        }
                    }
                    if want_x {
                        accumulate(&mut grads, *input, Tensor::new(x.shape(), dx)?);
                    }
                    if want_k {
                        accumulate(&mut grads, *kernel, Tensor::new(k.shape(), dk)?);
                    }
                }
                Op::MatMul { a, b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    if self.requires_grad(*a) {
                        let mut da = vec![0.0; m * k];
                        gemm(m, n, k, g.data(), (n, 1), bv.data(), (1, n), 0.0, &mut da);
                        accumulate(&mut grads, *a, Tensor::new([m, k], da)?);
                    }
                    if self.requires_grad(*b) {
                        let mut db = vec![0.0; k * n];
                        gemm(k, m, n, av.data(), (1, k), g.data(), (n, 1), 0.0, &mut db);
                        accumulate(&mut grads, *b, Tensor::new([k, n], db)?);
                    }
                }
                Op::AddBias { x, bias } => {
                    if self.requires_grad(*bias) {
                        let channels = node.value.shape()[1];
                        let inner: usize = node.value.shape()[2..].iter().product();
                        let mut db = vec![0.0; channels];
                        for (i, chunk) in g.data().chunks_exact(inner).enumerate() {
                            db[i % channels] += chunk.iter().sum::<f64>();
                        }
                        accumulate(&mut grads, *bias, Tensor::new([channels], db)?);
                    }
                    if self.requires_grad(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Relu { x } => {
                    let out = node.value.data();
                    let dx = g.data().iter().zip(out).map(|(&gi, &yi)| if yi > 0.0 { gi } else { 0.0 }).collect();
                    accumulate(&mut grads, *x, Tensor::new(g.shape(), dx)?);
                }
                Op::MaxPool2 { x, winners } => {
                    let xv = self.value(*x);
                    let mut dx = vec![0.0; xv.numel()];
                    for (&w, &gi) in winners.iter().zip(g.data()) {
                        dx[w] += gi;
                    }
                    accumulate(&mut grads, *x, Tensor::new(xv.shape(), dx)?);
                }
                Op::Reshape { x } => {
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads, *x, g.reshape(shape)?);
                }
                Op::Softmax { x } => {
                    let y = &node.value;
                    let cols = y.shape()[1];
                    let mut dx = Vec::with_capacity(y.numel());
                    for (yr, gr) in y.data().chunks_exact(cols).zip(g.data().chunks_exact(cols)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        dx.extend(yr.iter().zip(gr).map(|(yi, gi)| yi * (gi - dot)));
                    }
                    accumulate(&mut grads, *x, Tensor::new(y.shape(), dx)?);
                }
                Op::LogClamped { x, eps } => {
                    let xv = self.value(*x);
                    let dx = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&gi, &xi)| if xi >= *eps { gi / xi } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(xv.shape(), dx)?);
                }
                Op::MulConst { x, factor } => {
                    let dx = g.data().iter().zip(factor.data()).map(|(a, b)| a * b).collect();
                    accumulate(&mut grads, *x, Tensor::new(g.shape(), dx)?);
                }
                Op::Sum { x } => {
                    let seed = g.data()[0];
                    accumulate(&mut grads, *x, Tensor::full(self.value(*x).shape(), seed));
                }
                Op::Scale { x, factor } => {
                    let dx = g.data().iter().map(|v| v * factor).collect();
                    accumulate(&mut grads, *x, Tensor::new(g.shape(), dx)?);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
    match &mut grads[var.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Row-wise stabilized softmax of a rank-2 tensor, outside any tape.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let cols = x.shape()[1];
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks_exact(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|v| (v - max).exp()));
        let total: f64 = out[start..].iter().sum();
        out[start..].iter_mut().for_each(|v| *v /= total);
    }
    Tensor::new(x.shape(), out).expect("same shape")
}
