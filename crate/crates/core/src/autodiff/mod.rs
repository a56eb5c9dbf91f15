//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation of one forward pass as a node appended
//! after its parents, so node order is a topological order and the backward
//! sweep visits each node exactly once, last to first. Parameters bound into a
//! graph appear as a single leaf no matter how many branches read them, which
//! makes weight sharing across Siamese branches exact.

mod gradcheck;
pub mod kernels;

use std::collections::HashMap;
use std::sync::Arc;

pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{gemm, numel, Element, Layout, Tensor};
use kernels::ConvGeom;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T: Element> {
    Input,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
        cols: Option<Vec<T>>,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Relu(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
        rows: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    TemporalMax {
        inputs: Vec<Var>,
        argmax: Vec<u32>,
    },
    SelectRow {
        x: Var,
        row: usize,
    },
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddN(Vec<Var>),
    Scale(Var, T),
    AddScalar(Var),
    SumSquares(Var),
    Sum(Var),
    Sqrt(Var),
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

struct Node<T: Element> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// A single forward pass under construction.
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    params: HashMap<String, Var>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            params: HashMap::new(),
        }
    }

    /// A graph that records no backward state; used for inference.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let needs_grad = self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].needs_grad);
        let op = if needs_grad { op } else { strip(op) };
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input (no gradient).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op: Op::Input,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op: Op::Input,
            needs_grad: self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds a named parameter. Repeated calls return the same leaf.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let p = store
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name:?}")))?;
        self.nodes.push(Node {
            value: Arc::clone(p.shared_value()),
            op: Op::Input,
            needs_grad: self.grad_enabled && p.trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Makes `name` resolve to an existing node in later [`Graph::param`]
    /// calls.
    pub fn bind_param(&mut self, name: &str, v: Var) {
        self.params.insert(name.to_string(), v);
    }

    /// Parameters bound so far, by name.
    pub fn bound_params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// 2-D convolution over `[N, H, W, Cin]` (or `[H, W, Cin]`) input with a
    /// `[kH, kW, Cin, Cout]` kernel.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let ishape = self.shape(input).to_vec();
        let kshape = self.shape(kernel).to_vec();
        let (n, h, w, cin, batched) = match ishape.as_slice() {
            &[h, w, c] => (1, h, w, c, false),
            &[n, h, w, c] => (n, h, w, c, true),
            _ => {
                return Err(Error::shape(format!(
                    "conv2d input must be HxWxC or NxHxWxC, got {ishape:?}"
                )))
            }
        };
        let &[kh, kw, kc, cout] = kshape.as_slice() else {
            return Err(Error::shape(format!(
                "conv2d kernel must be kHxkWxCinxCout, got {kshape:?}"
            )));
        };
        if kc != cin {
            return Err(Error::shape(format!(
                "conv2d kernel expects {kc} input channels, input {ishape:?} has {cin}"
            )));
        }
        if self.shape(bias) != [cout] {
            return Err(Error::shape(format!(
                "conv2d bias must be [{cout}], got {:?}",
                self.shape(bias)
            )));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be >= 1"));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::shape(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let geom = ConvGeom {
            n,
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        };
        let (out, cols) = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            &geom,
        );
        let shape = if batched {
            vec![n, geom.oh, geom.ow, cout]
        } else {
            vec![geom.oh, geom.ow, cout]
        };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols: Some(cols),
            },
            &[input, kernel, bias],
        ))
    }

    /// Max pooling with a square window, no padding.
    pub fn max_pool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let ishape = self.shape(input).to_vec();
        let (n, h, w, c, batched) = match ishape.as_slice() {
            &[h, w, c] => (1, h, w, c, false),
            &[n, h, w, c] => (n, h, w, c, true),
            _ => {
                return Err(Error::shape(format!(
                    "max_pool2d input must be HxWxC or NxHxWxC, got {ishape:?}"
                )))
            }
        };
        if window == 0 || stride == 0 {
            return Err(Error::invalid("max_pool2d window and stride must be >= 1"));
        }
        if window > h || window > w {
            return Err(Error::shape(format!(
                "max_pool2d window {window} larger than input {h}x{w}"
            )));
        }
        let (out, argmax, oh, ow) =
            kernels::max_pool_forward(self.value(input).data(), n, h, w, c, window, stride);
        let shape = if batched {
            vec![n, oh, ow, c]
        } else {
            vec![oh, ow, c]
        };
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::MaxPool { input, argmax },
            &[input],
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(value, Op::Relu(x), &[x])
    }

    /// Affine map `x W + b` for `x` of shape `[d_in]` or `[N, d_in]`,
    /// `W: [d_in, d_out]`, `b: [d_out]`. The bias is added to every row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let &[din, dout] = ws.as_slice() else {
            return Err(Error::shape(format!("linear weights must be 2-D, got {ws:?}")));
        };
        let (rows, batched) = match xs.as_slice() {
            &[d] if d == din => (1, false),
            &[r, d] if d == din => (r, true),
            _ => {
                return Err(Error::shape(format!(
                    "linear input {xs:?} does not match weights {ws:?}"
                )))
            }
        };
        if self.shape(b) != [dout] {
            return Err(Error::shape(format!(
                "linear bias must be [{dout}], got {:?}",
                self.shape(b)
            )));
        }
        let bias = self.value(b).data();
        let mut out = Vec::with_capacity(rows * dout);
        for _ in 0..rows {
            out.extend_from_slice(bias);
        }
        gemm(
            rows,
            din,
            dout,
            self.value(x).data(),
            Layout::Normal,
            self.value(w).data(),
            Layout::Normal,
            T::one(),
            &mut out,
        );
        let shape = if batched { vec![rows, dout] } else { vec![dout] };
        Ok(self.push(Tensor::new(shape, out)?, Op::Linear { x, w, b, rows }, &[x, w, b]))
    }

    /// Concatenate along `axis`; all other dimensions must match.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::invalid("concat of an empty list"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            if s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::shape(format!("concat: {s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let outer = numel(&base[..axis]);
        let mut shape = base.clone();
        shape[axis] = total;
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let chunk = t.len() / outer;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// Elementwise maximum over equally shaped tensors.
    pub fn temporal_max(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::invalid("temporal_max of an empty list"))?;
        let shape = self.shape(*first).to_vec();
        for v in inputs {
            if self.shape(*v) != shape.as_slice() {
                return Err(Error::shape(format!(
                    "temporal_max: {:?} vs {shape:?}",
                    self.shape(*v)
                )));
            }
        }
        let mut out = self.value(*first).data().to_vec();
        let mut argmax = vec![0u32; out.len()];
        for (k, v) in inputs.iter().enumerate().skip(1) {
            for (i, &x) in self.value(*v).data().iter().enumerate() {
                if x > out[i] {
                    out[i] = x;
                    argmax[i] = k as u32;
                }
            }
        }
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::TemporalMax {
                inputs: inputs.to_vec(),
                argmax,
            },
            inputs,
        ))
    }

    /// `x[row]` along the leading axis.
    pub fn select_row(&mut self, x: Var, row: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() < 2 || row >= s[0] {
            return Err(Error::shape(format!("select_row {row} from {s:?}")));
        }
        let value = self.value(x).index_axis0(row);
        Ok(self.push(value, Op::SelectRow { x, row }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = (*self.nodes[x.0].value).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let vb = self.value(b).data();
        let mut value = self.value(a).clone();
        for (x, &y) in value.data_mut().iter_mut().zip(vb) {
            *x = *x - y;
        }
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    /// Ordered sum of equally shaped tensors.
    pub fn add_n(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::invalid("add_n of an empty list"))?;
        let mut value = self.value(*first).clone();
        for v in &inputs[1..] {
            self.same_shape(*first, *v, "add_n")?;
            value.add_assign(self.value(*v));
        }
        Ok(self.push(value, Op::AddN(inputs.to_vec()), inputs))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v + c);
        self.push(value, Op::AddScalar(x), &[x])
    }

    /// Squared L2 norm of all elements, as a scalar.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().map(|&v| v * v).sum();
        self.push(Tensor::scalar(s), Op::SumSquares(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.sqrt());
        self.push(value, Op::Sqrt(x), &[x])
    }

    /// Summed cross entropy of softmax(logits) against integer labels. Accepts
    /// `[C]` logits with one label or `[N, C]` logits with `N` labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        let (rows, classes) = match s.as_slice() {
            &[c] => (1, c),
            &[n, c] => (n, c),
            _ => return Err(Error::shape(format!("cross entropy logits {s:?}"))),
        };
        if labels.len() != rows {
            return Err(Error::shape(format!(
                "cross entropy: {} labels for {rows} rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let (losses, probs) =
            kernels::softmax_ce_forward(self.value(logits).data(), classes, labels);
        let total = T::from_f64(losses.iter().sum());
        Ok(self.push(
            Tensor::scalar(total),
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Reverse sweep from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        if self.value(output).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar output, got {:?}",
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[output.0].needs_grad {
            return Ok(Gradients { grads });
        }
        grads[output.0] = Some(Tensor::full(self.shape(output), T::one()));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Input) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        match &node.op {
            Op::Input => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            } => {
                let rows = geom.rows();
                let patch = geom.patch();
                let cols = cols.as_ref().expect("conv cache");
                self.acc(grads, *bias, |db| {
                    for r in gd.chunks_exact(geom.cout) {
                        for (d, &x) in db.iter_mut().zip(r) {
                            *d = *d + x;
                        }
                    }
                });
                self.acc(grads, *kernel, |dk| {
                    gemm(
                        patch,
                        rows,
                        geom.cout,
                        cols,
                        Layout::Transposed,
                        gd,
                        Layout::Normal,
                        T::one(),
                        dk,
                    );
                });
                if self.nodes[input.0].needs_grad {
                    let mut dcols = vec![T::zero(); rows * patch];
                    gemm(
                        rows,
                        geom.cout,
                        patch,
                        gd,
                        Layout::Normal,
                        self.value(*kernel).data(),
                        Layout::Transposed,
                        T::zero(),
                        &mut dcols,
                    );
                    self.acc(grads, *input, |di| kernels::col2im_add(&dcols, geom, di));
                }
            }
            Op::MaxPool { input, argmax } => {
                self.acc(grads, *input, |di| {
                    for (&idx, &x) in argmax.iter().zip(gd) {
                        di[idx] = di[idx] + x;
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |dx| {
                    for ((d, &v), &gv) in dx.iter_mut().zip(xv).zip(gd) {
                        if v > T::zero() {
                            *d = *d + gv;
                        }
                    }
                });
            }
            Op::Linear { x, w, b, rows } => {
                let ws = self.shape(*w);
                let (din, dout) = (ws[0], ws[1]);
                self.acc(grads, *b, |db| {
                    for r in gd.chunks_exact(dout) {
                        for (d, &v) in db.iter_mut().zip(r) {
                            *d = *d + v;
                        }
                    }
                });
                let xv = self.value(*x).data();
                self.acc(grads, *w, |dw| {
                    gemm(
                        din,
                        *rows,
                        dout,
                        xv,
                        Layout::Transposed,
                        gd,
                        Layout::Normal,
                        T::one(),
                        dw,
                    );
                });
                let wv = self.value(*w).data();
                self.acc(grads, *x, |dx| {
                    gemm(
                        *rows,
                        dout,
                        din,
                        gd,
                        Layout::Normal,
                        wv,
                        Layout::Transposed,
                        T::one(),
                        dx,
                    );
                });
            }
            Op::Concat { inputs, axis } => {
                let outer = numel(&self.shape(inputs[0])[..*axis]);
                let total_chunk = gd.len() / outer;
                let mut offset = 0;
                for v in inputs {
                    let chunk = self.value(*v).len() / outer;
                    self.acc(grads, *v, |dv| {
                        for o in 0..outer {
                            let src = &gd[o * total_chunk + offset..o * total_chunk + offset + chunk];
                            for (d, &s) in dv[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                *d = *d + s;
                            }
                        }
                    });
                    offset += chunk;
                }
            }
            Op::TemporalMax { inputs, argmax } => {
                for (k, v) in inputs.iter().enumerate() {
                    self.acc(grads, *v, |dv| {
                        for (i, (&a, &x)) in argmax.iter().zip(gd).enumerate() {
                            if a as usize == k {
                                dv[i] = dv[i] + x;
                            }
                        }
                    });
                }
            }
            Op::SelectRow { x, row } => {
                let n = gd.len();
                self.acc(grads, *x, |dx| {
                    for (d, &v) in dx[row * n..(row + 1) * n].iter_mut().zip(gd) {
                        *d = *d + v;
                    }
                });
            }
            Op::Reshape(x) => self.acc(grads, *x, |dx| add_slice(dx, gd)),
            Op::Add(a, b) => {
                self.acc(grads, *a, |d| add_slice(d, gd));
                self.acc(grads, *b, |d| add_slice(d, gd));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |d| add_slice(d, gd));
                self.acc(grads, *b, |d| {
                    for (x, &v) in d.iter_mut().zip(gd) {
                        *x = *x - v;
                    }
                });
            }
            Op::AddN(inputs) => {
                for v in inputs {
                    self.acc(grads, *v, |d| add_slice(d, gd));
                }
            }
            Op::Scale(x, c) => {
                self.acc(grads, *x, |d| {
                    for (a, &v) in d.iter_mut().zip(gd) {
                        *a = *a + v * *c;
                    }
                });
            }
            Op::AddScalar(x) => self.acc(grads, *x, |d| add_slice(d, gd)),
            Op::SumSquares(x) => {
                let two_g = gd[0] + gd[0];
                let xv = self.value(*x).data();
                self.acc(grads, *x, |d| {
                    for (a, &v) in d.iter_mut().zip(xv) {
                        *a = *a + two_g * v;
                    }
                });
            }
            Op::Sum(x) => {
                let g0 = gd[0];
                self.acc(grads, *x, |d| {
                    for a in d.iter_mut() {
                        *a = *a + g0;
                    }
                });
            }
            Op::Sqrt(x) => {
                let yv = node.value.data();
                let half = T::from_f64(0.5);
                self.acc(grads, *x, |d| {
                    for ((a, &y), &v) in d.iter_mut().zip(yv).zip(gd) {
                        // zero subgradient at the origin
                        if y > T::zero() {
                            *a = *a + v * half / y;
                        }
                    }
                });
            }
            Op::SoftmaxCe {
                logits,
                labels,
                probs,
            } => {
                let g0 = gd[0];
                let classes = probs.len() / labels.len();
                self.acc(grads, *logits, |d| {
                    for (r, &label) in labels.iter().enumerate() {
                        for c in 0..classes {
                            let i = r * classes + c;
                            let mut v = probs[i];
                            if c == label {
                                v = v - T::one();
                            }
                            d[i] = d[i] + g0 * v;
                        }
                    }
                });
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.shape(v)));
        f(slot.data_mut());
    }
}

fn add_slice<T: Element>(dst: &mut [T], src: &[T]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a = *a + b;
    }
}

/// Drops backward-only caches from ops that will never be differentiated.
fn strip<T: Element>(op: Op<T>) -> Op<T> {
    match op {
        Op::Conv2d { .. } | Op::MaxPool { .. } | Op::TemporalMax { .. } | Op::SoftmaxCe { .. } => {
            Op::Input
        }
        other => other,
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T: Element = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of a leaf, or `None` if it does not influence the output.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient with respect to a leaf, zero-filled when the leaf was unused.
    pub fn get_or_zeros(&self, graph: &Graph<T>, v: Var) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.shape(v)))
    }

    /// Gradients of all parameters bound in `graph`, sorted by name.
    pub fn params(&self, graph: &Graph<T>) -> Vec<(String, Tensor<T>)> {
        let mut out: Vec<_> = graph
            .bound_params()
            .filter_map(|(name, v)| self.get(v).map(|g| (name.to_string(), g.clone())))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }
}
