//! A linear record of forward operations and their reverse-mode rules.
//!
//! Blocks build their forward pass out of the operations here. A recording
//! tape keeps each op with the values it needs; [`GradTape::backward`] walks
//! the ops in reverse and accumulates gradients for every value and every
//! parameter touched on the way.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::sps::gather_columns;
use crate::tensor::{matmul, matmul_nt, matmul_tn, softmax_columns, softmax_rows, ChannelMatrix};

/// Handle to a value stored on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    #[cfg(test)]
    pub(crate) fn nth(i: usize) -> Self {
        Var(i)
    }
}

/// Identity of a learnable tensor. Owners assign these; the tape only uses
/// them as accumulator keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Affine,
    Gather,
    Gram,
    MatMulTn,
    MatMulNt,
    Scale,
    SoftmaxRows,
    SoftmaxCols,
    Add,
    RowMean,
    Relu,
    Sigmoid,
    MulBroadcast,
    AddBroadcast,
    Conv3x3,
    MaxPool2,
}

#[derive(Debug, Clone)]
enum Op {
    Affine {
        x: Var,
        out: Var,
        weight: ChannelMatrix,
        weight_id: ParamId,
        bias_id: Option<ParamId>,
    },
    Gather {
        x: Var,
        out: Var,
        indices: Vec<usize>,
    },
    Gram {
        x: Var,
        out: Var,
        scale: f64,
    },
    MatMulTn {
        a: Var,
        b: Var,
        out: Var,
    },
    MatMulNt {
        a: Var,
        b: Var,
        out: Var,
    },
    Scale {
        x: Var,
        out: Var,
        factor: f64,
    },
    SoftmaxRows {
        x: Var,
        out: Var,
    },
    SoftmaxCols {
        x: Var,
        out: Var,
    },
    Add {
        a: Var,
        b: Var,
        out: Var,
    },
    RowMean {
        x: Var,
        out: Var,
    },
    Relu {
        x: Var,
        out: Var,
    },
    Sigmoid {
        x: Var,
        out: Var,
    },
    MulBroadcast {
        x: Var,
        gate: Var,
        out: Var,
    },
    AddBroadcast {
        x: Var,
        delta: Var,
        out: Var,
    },
    Conv3x3 {
        x: Var,
        out: Var,
        kernel: Conv3x3Weights,
        weight_id: ParamId,
        bias_id: ParamId,
        height: usize,
        width: usize,
    },
    MaxPool2 {
        x: Var,
        out: Var,
        argmax: Vec<usize>,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Affine { .. } => OpKind::Affine,
            Op::Gather { .. } => OpKind::Gather,
            Op::Gram { .. } => OpKind::Gram,
            Op::MatMulTn { .. } => OpKind::MatMulTn,
            Op::MatMulNt { .. } => OpKind::MatMulNt,
            Op::Scale { .. } => OpKind::Scale,
            Op::SoftmaxRows { .. } => OpKind::SoftmaxRows,
            Op::SoftmaxCols { .. } => OpKind::SoftmaxCols,
            Op::Add { .. } => OpKind::Add,
            Op::RowMean { .. } => OpKind::RowMean,
            Op::Relu { .. } => OpKind::Relu,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::MulBroadcast { .. } => OpKind::MulBroadcast,
            Op::AddBroadcast { .. } => OpKind::AddBroadcast,
            Op::Conv3x3 { .. } => OpKind::Conv3x3,
            Op::MaxPool2 { .. } => OpKind::MaxPool2,
        }
    }
}

/// 3×3 same-padded convolution weights, laid out `[out, in, 3, 3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3Weights {
    pub out_channels: usize,
    pub in_channels: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv3x3Weights {
    pub fn zeros(out_channels: usize, in_channels: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            weight: vec![0.0; out_channels * in_channels * 9],
            bias: vec![0.0; out_channels],
        }
    }

    #[inline]
    fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weight[((o * self.in_channels + i) * 3 + ky) * 3 + kx]
    }

    /// Forward on a `[in, h*w]` matrix, stride 1, zero padding 1.
    pub fn apply(&self, x: &ChannelMatrix, height: usize, width: usize) -> Result<ChannelMatrix> {
        if x.rows() != self.in_channels || x.cols() != height * width {
            return Err(Error::shape(format!(
                "conv3x3 [{}, {}] cannot take input {:?} at {height}x{width}",
                self.out_channels,
                self.in_channels,
                x.shape()
            )));
        }
        let mut out = ChannelMatrix::zeros(self.out_channels, height * width);
        let src = x.data();
        let dst = out.data_mut();
        for o in 0..self.out_channels {
            let plane = &mut dst[o * height * width..(o + 1) * height * width];
            plane.fill(self.bias[o]);
            for i in 0..self.in_channels {
                let input = &src[i * height * width..(i + 1) * height * width];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let wv = self.w(o, i, ky, kx);
                        if wv == 0.0 {
                            continue;
                        }
                        for_each_tap(height, width, ky, kx, |out_idx, in_idx| {
                            plane[out_idx] += wv * input[in_idx];
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Visits every (output, input) index pair that one kernel tap connects.
#[inline]
fn for_each_tap(height: usize, width: usize, ky: usize, kx: usize, mut f: impl FnMut(usize, usize)) {
    let (y0, y1) = tap_range(height, ky);
    let (x0, x1) = tap_range(width, kx);
    for y in y0..y1 {
        let sy = y + ky - 1;
        for xx in x0..x1 {
            f(y * width + xx, sy * width + xx + kx - 1);
        }
    }
}

#[inline]
fn tap_range(len: usize, k: usize) -> (usize, usize) {
    match k {
        0 => (1, len),
        1 => (0, len),
        _ => (0, len.saturating_sub(1)),
    }
}

/// Forward record. See the module docs.
#[derive(Debug, Clone, Default)]
pub struct GradTape {
    values: Vec<ChannelMatrix>,
    ops: Vec<Op>,
    recording: bool,
}

/// Result of a backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    values: Vec<Option<ChannelMatrix>>,
    params: BTreeMap<ParamId, Vec<f64>>,
    visited: Vec<OpKind>,
}

impl Gradients {
    /// Gradient with respect to a tape value; zeros if nothing flowed into it.
    pub fn wrt(&self, v: Var, shape_like: &ChannelMatrix) -> ChannelMatrix {
        self.values[v.0]
            .clone()
            .unwrap_or_else(|| ChannelMatrix::zeros(shape_like.rows(), shape_like.cols()))
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(&id).map(Vec::as_slice)
    }

    pub fn params(&self) -> &BTreeMap<ParamId, Vec<f64>> {
        &self.params
    }

    /// Op kinds in the order backward visited them.
    pub fn visited(&self) -> &[OpKind] {
        &self.visited
    }
}

impl GradTape {
    /// A tape that records ops for a later backward sweep.
    pub fn recording() -> Self {
        Self {
            recording: true,
            ..Self::default()
        }
    }

    /// A tape that only evaluates.
    pub fn inference() -> Self {
        Self::default()
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Op kinds in forward order.
    pub fn op_kinds(&self) -> Vec<OpKind> {
        self.ops.iter().map(Op::kind).collect()
    }

    pub fn leaf(&mut self, value: ChannelMatrix) -> Var {
        self.values.push(value);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &ChannelMatrix {
        &self.values[v.0]
    }

    fn push(&mut self, value: ChannelMatrix, op: impl FnOnce(Var) -> Op) -> Var {
        let out = self.leaf(value);
        if self.recording {
            self.ops.push(op(out));
        }
        out
    }

    /// `weight * x + bias` broadcast over columns.
    pub fn affine(
        &mut self,
        x: Var,
        weight: &ChannelMatrix,
        bias: Option<&[f64]>,
        weight_id: ParamId,
        bias_id: Option<ParamId>,
    ) -> Result<Var> {
        let mut value = matmul(weight, self.value(x))?;
        if let Some(b) = bias {
            if b.len() != weight.rows() {
                return Err(Error::shape(format!(
                    "bias length {} for {} output rows",
                    b.len(),
                    weight.rows()
                )));
            }
            let n = value.cols();
            for (row, &bv) in value.data_mut().chunks_mut(n).zip(b) {
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
        let weight = if self.recording {
            weight.clone()
        } else {
            ChannelMatrix::zeros(1, 1)
        };
        Ok(self.push(value, |out| Op::Affine {
            x,
            out,
            weight,
            weight_id,
            bias_id: bias.and(bias_id),
        }))
    }

    pub fn gather_columns(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let cols = self.value(x).cols();
        if let Some(&bad) = indices.iter().find(|&&i| i >= cols) {
            return Err(Error::argument(format!("column {bad} out of range for {cols} columns")));
        }
        let value = gather_columns(self.value(x), indices);
        let indices = indices.to_vec();
        Ok(self.push(value, |out| Op::Gather { x, out, indices }))
    }

    /// `x xᵀ / scale`.
    pub fn gram(&mut self, x: Var, scale: f64) -> Result<Var> {
        let xv = self.value(x);
        let value = matmul_nt(xv, xv)?.scaled(1.0 / scale);
        Ok(self.push(value, |out| Op::Gram { x, out, scale }))
    }

    /// `aᵀ b`.
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = matmul_tn(self.value(a), self.value(b))?;
        Ok(self.push(value, |out| Op::MatMulTn { a, b, out }))
    }

    /// `a bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push(value, |out| Op::MatMulNt { a, b, out }))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).scaled(factor);
        self.push(value, |out| Op::Scale { x, out, factor })
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let value = softmax_rows(self.value(x))?;
        Ok(self.push(value, |out| Op::SoftmaxRows { x, out }))
    }

    pub fn softmax_columns(&mut self, x: Var) -> Result<Var> {
        let value = softmax_columns(self.value(x))?;
        Ok(self.push(value, |out| Op::SoftmaxCols { x, out }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, |out| Op::Add { a, b, out }))
    }

    /// Mean of each row, `[r, c] -> [r, 1]`.
    pub fn row_mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.cols() as f64;
        let data = (0..xv.rows()).map(|r| xv.row(r).iter().sum::<f64>() / n).collect();
        let value = ChannelMatrix::new(xv.rows(), 1, data).expect("rows > 0");
        self.push(value, |out| Op::RowMean { x, out })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, |out| Op::Relu { x, out })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, |out| Op::Sigmoid { x, out })
    }

    /// `out[i, p] = x[i, p] * gate[i]` with `gate` shaped `[r, 1]`.
    pub fn mul_broadcast(&mut self, x: Var, gate: Var) -> Result<Var> {
        let value = row_broadcast(self.value(x), self.value(gate), |a, g| a * g)?;
        Ok(self.push(value, |out| Op::MulBroadcast { x, gate, out }))
    }

    /// `out[i, p] = x[i, p] + delta[i]` with `delta` shaped `[r, 1]`.
    pub fn add_broadcast(&mut self, x: Var, delta: Var) -> Result<Var> {
        let value = row_broadcast(self.value(x), self.value(delta), |a, d| a + d)?;
        Ok(self.push(value, |out| Op::AddBroadcast { x, delta, out }))
    }

    pub fn conv3x3(
        &mut self,
        x: Var,
        kernel: &Conv3x3Weights,
        height: usize,
        width: usize,
        weight_id: ParamId,
        bias_id: ParamId,
    ) -> Result<Var> {
        let value = kernel.apply(self.value(x), height, width)?;
        let kernel = if self.recording {
            kernel.clone()
        } else {
            Conv3x3Weights::zeros(0, 0)
        };
        Ok(self.push(value, |out| Op::Conv3x3 {
            x,
            out,
            kernel,
            weight_id,
            bias_id,
            height,
            width,
        }))
    }

    /// 2×2 max pooling with stride 2. Ties go to the first element in scan
    /// order; odd trailing rows/columns are dropped.
    pub fn max_pool2(&mut self, x: Var, height: usize, width: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.cols() != height * width || height < 2 || width < 2 {
            return Err(Error::shape(format!(
                "max_pool2 on {:?} at {height}x{width}",
                xv.shape()
            )));
        }
        let (oh, ow) = (height / 2, width / 2);
        let channels = xv.rows();
        let mut value = ChannelMatrix::zeros(channels, oh * ow);
        let mut argmax = Vec::with_capacity(channels * oh * ow);
        for c in 0..channels {
            let plane = xv.row(c);
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = (2 * y) * width + 2 * xx;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = (2 * y + dy) * width + 2 * xx + dx;
                        if plane[idx] > plane[best] {
                            best = idx;
                        }
                    }
                    value.set(c, y * ow + xx, plane[best]);
                    argmax.push(c * height * width + best);
                }
            }
        }
        Ok(self.push(value, |out| Op::MaxPool2 { x, out, argmax }))
    }

    /// Reverse sweep seeded with `d(loss)/d(var)` for each seed var.
    pub fn backward(&self, seeds: &[(Var, ChannelMatrix)]) -> Result<Gradients> {
        if !self.recording {
            return Err(Error::argument("backward on a tape that did not record"));
        }
        let mut grads: Vec<Option<ChannelMatrix>> = vec![None; self.values.len()];
        let mut params: BTreeMap<ParamId, Vec<f64>> = BTreeMap::new();
        for (v, g) in seeds {
            if g.shape() != self.value(*v).shape() {
                return Err(Error::shape(format!(
                    "seed gradient {:?} for value {:?}",
                    g.shape(),
                    self.value(*v).shape()
                )));
            }
            accumulate(&mut grads, *v, g.clone());
        }
        let mut visited = Vec::with_capacity(self.ops.len());

        for op in self.ops.iter().rev() {
            visited.push(op.kind());
            let out = output_of(op);
            let Some(g) = grads[out.0].take() else {
                continue;
            };
            match op {
                Op::Affine {
                    x,
                    weight,
                    weight_id,
                    bias_id,
                    ..
                } => {
                    let xv = self.value(*x);
                    accumulate(&mut grads, *x, matmul_tn(weight, &g)?);
                    add_param(&mut params, *weight_id, matmul_nt(&g, xv)?.data());
                    if let Some(b) = bias_id {
                        let sums: Vec<f64> = (0..g.rows()).map(|r| g.row(r).iter().sum()).collect();
                        add_param(&mut params, *b, &sums);
                    }
                }
                Op::Gather { x, indices, .. } => {
                    let xv = self.value(*x);
                    let mut dx = ChannelMatrix::zeros(xv.rows(), xv.cols());
                    for r in 0..g.rows() {
                        for (t, &i) in indices.iter().enumerate() {
                            let cur = dx.get(r, i);
                            dx.set(r, i, cur + g.get(r, t));
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Gram { x, scale, .. } => {
                    let sym = g.add(&g.transpose())?;
                    let dx = matmul(&sym, self.value(*x))?.scaled(1.0 / scale);
                    accumulate(&mut grads, *x, dx);
                }
                Op::MatMulTn { a, b, .. } => {
                    accumulate(&mut grads, *a, matmul_nt(self.value(*b), &g)?);
                    accumulate(&mut grads, *b, matmul(self.value(*a), &g)?);
                }
                Op::MatMulNt { a, b, .. } => {
                    accumulate(&mut grads, *a, matmul(&g, self.value(*b))?);
                    accumulate(&mut grads, *b, matmul_tn(&g, self.value(*a))?);
                }
                Op::Scale { x, factor, .. } => {
                    accumulate(&mut grads, *x, g.scaled(*factor));
                }
                Op::SoftmaxRows { x, out } => {
                    let dx = softmax_rows_backward(self.value(*out), &g);
                    accumulate(&mut grads, *x, dx);
                }
                Op::SoftmaxCols { x, out } => {
                    let dx = softmax_rows_backward(&self.value(*out).transpose(), &g.transpose());
                    accumulate(&mut grads, *x, dx.transpose());
                }
                Op::Add { a, b, .. } => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::RowMean { x, .. } => {
                    let xv = self.value(*x);
                    let n = xv.cols();
                    let mut dx = ChannelMatrix::zeros(xv.rows(), n);
                    for (r, row) in dx.data_mut().chunks_mut(n).enumerate() {
                        row.fill(g.get(r, 0) / n as f64);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Relu { x, .. } => {
                    let dx = self.value(*x).zip_with(&g, |xv, gv| if xv > 0.0 { gv } else { 0.0 })?;
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid { x, out } => {
                    let dx = self.value(*out).zip_with(&g, |y, gv| gv * y * (1.0 - y))?;
                    accumulate(&mut grads, *x, dx);
                }
                Op::MulBroadcast { x, gate, .. } => {
                    let xv = self.value(*x);
                    let gv = self.value(*gate);
                    accumulate(&mut grads, *x, row_broadcast(&g, gv, |a, s| a * s)?);
                    let dgate: Vec<f64> = (0..xv.rows())
                        .map(|r| g.row(r).iter().zip(xv.row(r)).map(|(a, b)| a * b).sum())
                        .collect();
                    accumulate(&mut grads, *gate, ChannelMatrix::new(xv.rows(), 1, dgate)?);
                }
                Op::AddBroadcast { x, delta, .. } => {
                    let ddelta: Vec<f64> = (0..g.rows()).map(|r| g.row(r).iter().sum()).collect();
                    accumulate(&mut grads, *delta, ChannelMatrix::new(g.rows(), 1, ddelta)?);
                    accumulate(&mut grads, *x, g);
                }
                Op::Conv3x3 {
                    x,
                    kernel,
                    weight_id,
                    bias_id,
                    height,
                    width,
                    ..
                } => {
                    let (dx, dw, db) = conv3x3_backward(kernel, self.value(*x), &g, *height, *width);
                    accumulate(&mut grads, *x, dx);
                    add_param(&mut params, *weight_id, &dw);
                    add_param(&mut params, *bias_id, &db);
                }
                Op::MaxPool2 { x, argmax, .. } => {
                    let xv = self.value(*x);
                    let mut dx = ChannelMatrix::zeros(xv.rows(), xv.cols());
                    for (&src, &gv) in argmax.iter().zip(g.data()) {
                        dx.data_mut()[src] += gv;
                    }
                    accumulate(&mut grads, *x, dx);
                }
            }
        }
        Ok(Gradients {
            values: grads,
            params,
            visited,
        })
    }
}

fn output_of(op: &Op) -> Var {
    match op {
        Op::Affine { out, .. }
        | Op::Gather { out, .. }
        | Op::Gram { out, .. }
        | Op::MatMulTn { out, .. }
        | Op::MatMulNt { out, .. }
        | Op::Scale { out, .. }
        | Op::SoftmaxRows { out, .. }
        | Op::SoftmaxCols { out, .. }
        | Op::Add { out, .. }
        | Op::RowMean { out, .. }
        | Op::Relu { out, .. }
        | Op::Sigmoid { out, .. }
        | Op::MulBroadcast { out, .. }
        | Op::AddBroadcast { out, .. }
        | Op::Conv3x3 { out, .. }
        | Op::MaxPool2 { out, .. } => *out,
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn row_broadcast(
    x: &ChannelMatrix,
    per_row: &ChannelMatrix,
    f: impl Fn(f64, f64) -> f64,
) -> Result<ChannelMatrix> {
    if per_row.cols() != 1 || per_row.rows() != x.rows() {
        return Err(Error::shape(format!(
            "cannot broadcast {:?} over {:?}",
            per_row.shape(),
            x.shape()
        )));
    }
    let mut out = x.clone();
    let n = out.cols();
    for (r, row) in out.data_mut().chunks_mut(n).enumerate() {
        let s = per_row.get(r, 0);
        row.iter_mut().for_each(|v| *v = f(*v, s));
    }
    Ok(out)
}

fn accumulate(grads: &mut [Option<ChannelMatrix>], v: Var, g: ChannelMatrix) {
    match &mut grads[v.0] {
        Some(existing) => existing
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

fn add_param(params: &mut BTreeMap<ParamId, Vec<f64>>, id: ParamId, g: &[f64]) {
    let acc = params.entry(id).or_insert_with(|| vec![0.0; g.len()]);
    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
}

/// Per row: `dx = y ⊙ (g − ⟨g, y⟩)`.
fn softmax_rows_backward(y: &ChannelMatrix, g: &ChannelMatrix) -> ChannelMatrix {
    let mut dx = ChannelMatrix::zeros(y.rows(), y.cols());
    let n = y.cols();
    for (r, row) in dx.data_mut().chunks_mut(n).enumerate() {
        let (yr, gr) = (y.row(r), g.row(r));
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((d, &yv), &gv) in row.iter_mut().zip(yr).zip(gr) {
            *d = yv * (gv - dot);
        }
    }
    dx
}

fn conv3x3_backward(
    kernel: &Conv3x3Weights,
    x: &ChannelMatrix,
    g: &ChannelMatrix,
    height: usize,
    width: usize,
) -> (ChannelMatrix, Vec<f64>, Vec<f64>) {
    let hw = height * width;
    let mut dx = ChannelMatrix::zeros(x.rows(), x.cols());
    let mut dw = vec![0.0; kernel.weight.len()];
    let db: Vec<f64> = (0..g.rows()).map(|o| g.row(o).iter().sum()).collect();
    for o in 0..kernel.out_channels {
        let gplane = g.row(o);
        for i in 0..kernel.in_channels {
            let input = x.row(i);
            for ky in 0..3 {
                for kx in 0..3 {
                    let widx = ((o * kernel.in_channels + i) * 3 + ky) * 3 + kx;
                    let wv = kernel.weight[widx];
                    let mut acc = 0.0;
                    {
                        let dplane = &mut dx.data_mut()[i * hw..(i + 1) * hw];
                        for_each_tap(height, width, ky, kx, |out_idx, in_idx| {
                            acc += gplane[out_idx] * input[in_idx];
                            dplane[in_idx] += wv * gplane[out_idx];
                        });
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
    (dx, dw, db)
}
