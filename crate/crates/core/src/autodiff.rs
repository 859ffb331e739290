//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`TapeBuilder`] evaluates primitives eagerly while recording them, with
//! their saved activations, in topological order. [`Tape::backward`] replays
//! the recording in reverse and accumulates parameter gradients into a flat
//! [`ParamVector`]. All tensors carry a leading batch dimension; the backward
//! pass returns the gradient of `sum(seed * output)` over the whole batch.
//!
//! Primitive conventions:
//! - dense: `y = x W^T + b` with `W` of shape `(out, in)`;
//! - conv: 3x3 cross-correlation, stride 1, zero "same" padding, weight
//!   `(c_out, c_in, 3, 3)`;
//! - max pool: 2x2 window, stride 2, first maximum wins ties;
//! - relu: derivative at 0 is 0.

use crate::error::{NtkError, Result};
use crate::tensor::{Fingerprint, ParamVector, Tensor};

/// Index of a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param { segment: usize },
    Dense { x: NodeId, w: NodeId, b: Option<NodeId> },
    Conv3x3 { x: NodeId, w: NodeId, b: Option<NodeId>, cols: Vec<f64> },
    MaxPool2 { x: NodeId, argmax: Vec<usize> },
    Relu { x: NodeId },
    Flatten { x: NodeId },
    Mul { a: NodeId, b: NodeId },
    Square { x: NodeId },
}

#[derive(Debug)]
struct Node {
    label: String,
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Recorded forward computation.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    output: NodeId,
    fingerprint: Fingerprint,
    param_dim: usize,
}

/// Records primitives against a fixed parameter snapshot.
pub struct TapeBuilder<'p> {
    params: &'p ParamVector,
    nodes: Vec<Node>,
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every caller passes slices whose extents match (m, k, n) and the
    // given strides; asserted in debug builds below.
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

/// Unfolds one `(c_in, h, w)` image into the `(c_in*9) x (h*w)` patch matrix,
/// written into columns `[col_off, col_off + h*w)` of a matrix with `ld` columns.
fn im2col(x: &[f64], cin: usize, h: usize, w: usize, cols: &mut [f64], ld: usize, col_off: usize) {
    for ci in 0..cin {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * ld + col_off;
                for y in 0..h {
                    let dst = &mut cols[row + y * w..row + (y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (xx, d) in dst.iter_mut().enumerate() {
                        let sx = xx as isize + kx as isize - 1;
                        *d = if sx < 0 || sx >= w as isize {
                            0.0
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch gradients back into the image.
fn col2im(dcols: &[f64], cin: usize, h: usize, w: usize, ld: usize, col_off: usize, dx: &mut [f64]) {
    for ci in 0..cin {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * ld + col_off;
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &dcols[row + y * w..row + (y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for (xx, g) in src.iter().enumerate() {
                        let sx = xx as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

impl<'p> TapeBuilder<'p> {
    pub fn new(params: &'p ParamVector) -> Self {
        TapeBuilder {
            params,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, label: &str, op: Op, value: Tensor, requires_grad: bool) -> Result<NodeId> {
        if let Some(pos) = value.data().iter().position(|v| !v.is_finite()) {
            return Err(NtkError::numerical(
                format!("layer {label}"),
                format!("non-finite activation at flat index {pos}"),
            ));
        }
        self.nodes.push(Node {
            label: label.to_string(),
            op,
            value,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Non-differentiable input; the first dimension is the batch.
    pub fn input(&mut self, x: Tensor) -> Result<NodeId> {
        if x.shape().len() < 2 {
            return Err(NtkError::Config(format!(
                "inputs need a leading batch dimension, got shape {:?}",
                x.shape()
            )));
        }
        self.push("input", Op::Input, x, false)
    }

    /// Loads a parameter segment, scaled by its forward multiplier.
    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        let segment = self
            .params
            .segment_index(name)
            .ok_or_else(|| NtkError::Config(format!("no parameter segment named {name}")))?;
        let seg = &self.params.segments()[segment];
        let raw = &self.params.data()[seg.range()];
        let data: Vec<f64> = if seg.multiplier == 1.0 {
            raw.to_vec()
        } else {
            raw.iter().map(|v| v * seg.multiplier).collect()
        };
        let value = Tensor::from_raw(seg.shape.clone(), data);
        let label = seg.name.clone();
        self.push(&label, Op::Param { segment }, value, true)
    }

    pub fn dense(&mut self, label: &str, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(NtkError::Config(format!(
                "{label}: dense expects x (B, in) and W (out, in), got {xs:?} and {ws:?}"
            )));
        }
        let (batch, fan_in, fan_out) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.value(b).shape() != [fan_out] {
                return Err(NtkError::Config(format!(
                    "{label}: bias shape {:?} != [{fan_out}]",
                    self.value(b).shape()
                )));
            }
        }
        let mut out = vec![0.0; batch * fan_out];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(fan_out) {
                row.copy_from_slice(bias);
            }
        }
        gemm(
            batch,
            fan_in,
            fan_out,
            self.value(x).data(),
            (fan_in as isize, 1),
            self.value(w).data(),
            (1, fan_in as isize),
            if b.is_some() { 1.0 } else { 0.0 },
            &mut out,
            (fan_out as isize, 1),
        );
        let rg = self.node(x).requires_grad || self.node(w).requires_grad || b.is_some();
        self.push(
            label,
            Op::Dense { x, w, b },
            Tensor::from_raw(vec![batch, fan_out], out),
            rg,
        )
    }

    pub fn conv3x3(&mut self, label: &str, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if xs.len() != 4 || ws.len() != 4 || ws[2] != 3 || ws[3] != 3 || ws[1] != xs[1] {
            return Err(NtkError::Config(format!(
                "{label}: conv expects x (B, C_in, H, W) and W (C_out, C_in, 3, 3), got {xs:?} and {ws:?}"
            )));
        }
        let (batch, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let cout = ws[0];
        if let Some(b) = b {
            if self.value(b).shape() != [cout] {
                return Err(NtkError::Config(format!("{label}: bias shape mismatch")));
            }
        }
        let hw = h * wd;
        let k = cin * 9;
        let ld = batch * hw;
        let mut cols = vec![0.0; k * ld];
        let xd = self.value(x).data();
        for s in 0..batch {
            im2col(&xd[s * cin * hw..(s + 1) * cin * hw], cin, h, wd, &mut cols, ld, s * hw);
        }
        // (c_out x k) * (k x B*hw)
        let mut flat = vec![0.0; cout * ld];
        gemm(
            cout,
            k,
            ld,
            self.value(w).data(),
            (k as isize, 1),
            &cols,
            (ld as isize, 1),
            0.0,
            &mut flat,
            (ld as isize, 1),
        );
        let mut out = vec![0.0; batch * cout * hw];
        let bias = b.map(|b| self.value(b).data().to_vec());
        for s in 0..batch {
            for c in 0..cout {
                let src = &flat[c * ld + s * hw..c * ld + (s + 1) * hw];
                let dst = &mut out[(s * cout + c) * hw..(s * cout + c + 1) * hw];
                let shift = bias.as_ref().map_or(0.0, |b| b[c]);
                for (d, v) in dst.iter_mut().zip(src) {
                    *d = v + shift;
                }
            }
        }
        let rg = self.node(x).requires_grad || self.node(w).requires_grad || b.is_some();
        self.push(
            label,
            Op::Conv3x3 { x, w, b, cols },
            Tensor::from_raw(vec![batch, cout, h, wd], out),
            rg,
        )
    }

    pub fn max_pool2(&mut self, label: &str, x: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 || !xs[2].is_multiple_of(2) || !xs[3].is_multiple_of(2) {
            return Err(NtkError::Config(format!(
                "{label}: 2x2 pooling needs (B, C, H, W) with even H and W, got {xs:?}"
            )));
        }
        let (planes, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
        let (oh, ow) = (h / 2, w / 2);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.node(x).requires_grad;
        self.push(
            label,
            Op::MaxPool2 { x, argmax },
            Tensor::from_raw(vec![xs[0], xs[1], oh, ow], out),
            rg,
        )
    }

    pub fn relu(&mut self, label: &str, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let out = v.data().iter().map(|&a| if a > 0.0 { a } else { 0.0 }).collect();
        let t = Tensor::from_raw(v.shape().to_vec(), out);
        let rg = self.node(x).requires_grad;
        self.push(label, Op::Relu { x }, t, rg)
    }

    /// `(B, d1, d2, ...) -> (B, d1*d2*...)`.
    pub fn flatten(&mut self, label: &str, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let batch = v.shape()[0];
        let rest = v.len() / batch;
        let t = Tensor::from_raw(vec![batch, rest], v.data().to_vec());
        let rg = self.node(x).requires_grad;
        self.push(label, Op::Flatten { x }, t, rg)
    }

    /// Elementwise product. A rank-1 operand of length `n` broadcasts across
    /// the batch of a `(B, n)` operand.
    pub fn mul(&mut self, label: &str, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let out_shape = broadcast_shape(va.shape(), vb.shape()).ok_or_else(|| {
            NtkError::Config(format!(
                "{label}: cannot multiply {:?} by {:?}",
                va.shape(),
                vb.shape()
            ))
        })?;
        let n: usize = out_shape.iter().product();
        let out = (0..n)
            .map(|i| va.data()[i % va.len()] * vb.data()[i % vb.len()])
            .collect();
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        self.push(label, Op::Mul { a, b }, Tensor::from_raw(out_shape, out), rg)
    }

    pub fn square(&mut self, label: &str, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let t = Tensor::from_raw(v.shape().to_vec(), v.data().iter().map(|a| a * a).collect());
        let rg = self.node(x).requires_grad;
        self.push(label, Op::Square { x }, t, rg)
    }

    /// Seals the recording; `output` must be a `(B, outputs)` node.
    pub fn finish(self, output: NodeId) -> Result<(Tensor, Tape)> {
        let shape = self.nodes[output.0].value.shape();
        if shape.len() != 2 {
            return Err(NtkError::Config(format!(
                "tape output must be (batch, outputs), got {shape:?}"
            )));
        }
        let out = self.nodes[output.0].value.clone();
        Ok((
            out,
            Tape {
                nodes: self.nodes,
                output,
                fingerprint: self.params.fingerprint(),
                param_dim: self.params.dim(),
            },
        ))
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a == b {
        return Some(a.to_vec());
    }
    let (na, nb): (usize, usize) = (a.iter().product(), b.iter().product());
    if nb > na && nb % na == 0 && b.ends_with(a) {
        Some(b.to_vec())
    } else if na > nb && na % nb == 0 && a.ends_with(b) {
        Some(a.to_vec())
    } else {
        None
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

/// Loss used for training and for [`grad_loss`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Softmax cross-entropy on logits.
    CrossEntropy,
    /// `0.5 * ||f - y||^2` per sample.
    Squared,
}

/// Per-batch targets.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Classes(Vec<usize>),
    /// `(B, outputs)` real-valued targets.
    Values(Tensor),
}

/// Mean loss over the batch and its gradient with respect to the outputs.
pub fn loss_and_output_grad(output: &Tensor, kind: LossKind, target: &Target) -> Result<(f64, Tensor)> {
    let (batch, outputs) = (output.shape()[0], output.shape()[1]);
    let f = output.data();
    let mut grad = vec![0.0; f.len()];
    let mut total = 0.0;
    match (kind, target) {
        (LossKind::CrossEntropy, Target::Classes(labels)) => {
            if labels.len() != batch {
                return Err(NtkError::Data(format!(
                    "{} labels for a batch of {batch}",
                    labels.len()
                )));
            }
            for (s, &label) in labels.iter().enumerate() {
                if label >= outputs {
                    return Err(NtkError::Data(format!(
                        "class index {label} out of range for {outputs} outputs"
                    )));
                }
                let row = &f[s * outputs..(s + 1) * outputs];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
                let log_z = max + sum_exp.ln();
                total += log_z - row[label];
                let g = &mut grad[s * outputs..(s + 1) * outputs];
                for (j, gj) in g.iter_mut().enumerate() {
                    *gj = (row[j] - log_z).exp() / batch as f64;
                }
                g[label] -= 1.0 / batch as f64;
            }
        }
        (LossKind::Squared, Target::Values(y)) => {
            if y.shape() != output.shape() {
                return Err(NtkError::Data(format!(
                    "target shape {:?} != output shape {:?}",
                    y.shape(),
                    output.shape()
                )));
            }
            for (i, (fi, yi)) in f.iter().zip(y.data()).enumerate() {
                let e = fi - yi;
                total += 0.5 * e * e;
                grad[i] = e / batch as f64;
            }
        }
        (kind, _) => {
            return Err(NtkError::Data(format!(
                "target kind does not match loss {kind:?}"
            )))
        }
    }
    Ok((total / batch as f64, Tensor::from_raw(vec![batch, outputs], grad)))
}

impl Tape {
    pub fn output(&self) -> &Tensor {
        &self.nodes[self.output.0].value
    }

    pub fn batch_size(&self) -> usize {
        self.output().shape()[0]
    }

    pub fn num_outputs(&self) -> usize {
        self.output().shape()[1]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Label of every recorded node, in topological order.
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|n| n.label.as_str())
    }

    /// Gradient of `sum(seed * output)` with respect to the raw parameters.
    pub fn backward(&self, params: &ParamVector, seed: &Tensor) -> Result<ParamVector> {
        self.backward_counted(params, seed).map(|(g, _)| g)
    }

    /// Like [`Tape::backward`], also returning how many nodes were visited.
    pub fn backward_counted(&self, params: &ParamVector, seed: &Tensor) -> Result<(ParamVector, usize)> {
        if params.fingerprint() != self.fingerprint || params.dim() != self.param_dim {
            return Err(NtkError::Usage(
                "stale tape: parameters changed since the forward pass".into(),
            ));
        }
        if seed.shape() != self.output().shape() {
            return Err(NtkError::Usage(format!(
                "seed shape {:?} != output shape {:?}",
                seed.shape(),
                self.output().shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[self.output.0] = Some(seed.data().to_vec());
        let mut out = vec![0.0; params.dim()];
        let mut visited = 0;

        for idx in (0..self.nodes.len()).rev() {
            visited += 1;
            let node = &self.nodes[idx];
            let Some(g) = grads[idx].take() else { continue };
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param { segment } => {
                    let seg = &params.segments()[*segment];
                    for (o, gi) in out[seg.range()].iter_mut().zip(&g) {
                        *o += gi * seg.multiplier;
                    }
                }
                Op::Dense { x, w, b } => {
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.nodes[w.0].value;
                    let (batch, fan_in, fan_out) = (xv.shape()[0], xv.shape()[1], wv.shape()[0]);
                    if self.nodes[w.0].requires_grad {
                        let dw = accumulate(&mut grads[w.0], fan_out * fan_in);
                        gemm(
                            fan_out,
                            batch,
                            fan_in,
                            &g,
                            (1, fan_out as isize),
                            xv.data(),
                            (fan_in as isize, 1),
                            1.0,
                            dw,
                            (fan_in as isize, 1),
                        );
                    }
                    if let Some(b) = b {
                        let db = accumulate(&mut grads[b.0], fan_out);
                        for row in g.chunks(fan_out) {
                            for (d, gi) in db.iter_mut().zip(row) {
                                *d += gi;
                            }
                        }
                    }
                    if self.nodes[x.0].requires_grad {
                        let dx = accumulate(&mut grads[x.0], batch * fan_in);
                        gemm(
                            batch,
                            fan_out,
                            fan_in,
                            &g,
                            (fan_out as isize, 1),
                            wv.data(),
                            (fan_in as isize, 1),
                            1.0,
                            dx,
                            (fan_in as isize, 1),
                        );
                    }
                }
                Op::Conv3x3 { x, w, b, cols } => {
                    let xs = self.nodes[x.0].value.shape();
                    let (batch, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                    let wv = &self.nodes[w.0].value;
                    let cout = wv.shape()[0];
                    let (hw, k) = (h * wd, cin * 9);
                    let ld = batch * hw;
                    // gather dy into (c_out x B*hw)
                    let mut dy = vec![0.0; cout * ld];
                    for s in 0..batch {
                        for c in 0..cout {
                            dy[c * ld + s * hw..c * ld + (s + 1) * hw]
                                .copy_from_slice(&g[(s * cout + c) * hw..(s * cout + c + 1) * hw]);
                        }
                    }
                    if self.nodes[w.0].requires_grad {
                        let dw = accumulate(&mut grads[w.0], cout * k);
                        gemm(cout, ld, k, &dy, (ld as isize, 1), cols, (1, ld as isize), 1.0, dw, (k as isize, 1));
                    }
                    if let Some(b) = b {
                        let db = accumulate(&mut grads[b.0], cout);
                        for (c, d) in db.iter_mut().enumerate() {
                            *d += dy[c * ld..(c + 1) * ld].iter().sum::<f64>();
                        }
                    }
                    if self.nodes[x.0].requires_grad {
                        let mut dcols = vec![0.0; k * ld];
                        gemm(k, cout, ld, wv.data(), (1, k as isize), &dy, (ld as isize, 1), 0.0, &mut dcols, (ld as isize, 1));
                        let dx = accumulate(&mut grads[x.0], batch * cin * hw);
                        for s in 0..batch {
                            col2im(&dcols, cin, h, wd, ld, s * hw, &mut dx[s * cin * hw..(s + 1) * cin * hw]);
                        }
                    }
                }
                Op::MaxPool2 { x, argmax } => {
                    if self.nodes[x.0].requires_grad {
                        let len = self.nodes[x.0].value.len();
                        let dx = accumulate(&mut grads[x.0], len);
                        for (gi, &src) in g.iter().zip(argmax) {
                            dx[src] += gi;
                        }
                    }
                }
                Op::Relu { x } => {
                    if self.nodes[x.0].requires_grad {
                        let xv = self.nodes[x.0].value.data();
                        let dx = accumulate(&mut grads[x.0], xv.len());
                        for ((d, gi), xi) in dx.iter_mut().zip(&g).zip(xv) {
                            if *xi > 0.0 {
                                *d += gi;
                            }
                        }
                    }
                }
                Op::Flatten { x } => {
                    if self.nodes[x.0].requires_grad {
                        let dx = accumulate(&mut grads[x.0], g.len());
                        for (d, gi) in dx.iter_mut().zip(&g) {
                            *d += gi;
                        }
                    }
                }
                Op::Mul { a, b } => {
                    for (this, other) in [(*a, *b), (*b, *a)] {
                        if !self.nodes[this.0].requires_grad {
                            continue;
                        }
                        let ov = self.nodes[other.0].value.data();
                        let len = self.nodes[this.0].value.len();
                        let d = accumulate(&mut grads[this.0], len);
                        for (i, gi) in g.iter().enumerate() {
                            d[i % len] += gi * ov[i % ov.len()];
                        }
                    }
                }
                Op::Square { x } => {
                    if self.nodes[x.0].requires_grad {
                        let xv = self.nodes[x.0].value.data();
                        let dx = accumulate(&mut grads[x.0], xv.len());
                        for ((d, gi), xi) in dx.iter_mut().zip(&g).zip(xv) {
                            *d += 2.0 * xi * gi;
                        }
                    }
                }
            }
        }
        Ok((ParamVector::with_layout_of(params, out), visited))
    }
}

/// Gradient of output `output_index` of a single-sample tape.
pub fn grad_scalar(tape: &Tape, params: &ParamVector, output_index: usize) -> Result<ParamVector> {
    if tape.batch_size() != 1 {
        return Err(NtkError::Usage(format!(
            "grad_scalar needs a single-sample tape, batch is {}",
            tape.batch_size()
        )));
    }
    let outputs = tape.num_outputs();
    if output_index >= outputs {
        return Err(NtkError::Usage(format!(
            "output index {output_index} out of range for {outputs} outputs"
        )));
    }
    let mut seed = Tensor::zeros(vec![1, outputs]);
    seed.data_mut()[output_index] = 1.0;
    tape.backward(params, &seed)
}

/// Mean loss over the tape's batch and its parameter gradient.
pub fn grad_loss(
    tape: &Tape,
    params: &ParamVector,
    kind: LossKind,
    target: &Target,
) -> Result<(f64, ParamVector)> {
    let (loss, seed) = loss_and_output_grad(tape.output(), kind, target)?;
    let grad = tape.backward(params, &seed)?;
    Ok((loss, grad))
}
