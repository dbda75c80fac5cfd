use std::sync::Arc;

use crate::diffcore::tensor::{gemm_acc, Tensor};
use crate::error::{Error, Result};
use crate::pointcore::PoolingMap;

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const L2_NORMALIZE_EPS: f64 = 1e-8;

/// Handle to a node recorded on a [`Tape`].
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
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Concat { parts: Vec<Var>, axis: usize },
    Gather { src: Var, index: Arc<Vec<usize>> },
    SegmentMean { src: Var, map: Arc<PoolingMap> },
    SegmentMax { src: Var, argmax: Vec<usize> },
    Relu(Var),
    Gelu(Var),
    LayerNorm { src: Var, rstd: Vec<f64> },
    Softmax(Var),
    LogSoftmax(Var),
    Log(Var),
    Exp(Var),
    L2Normalize { src: Var, eps: f64, norms: Vec<f64> },
    Sum(Var),
    Mean(Var),
    SumAxis { src: Var, axis: usize },
    RowNorm(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation so that [`Tape::backward`] can replay it in
/// reverse. Nodes are appended in evaluation order, so the node list is
/// already topologically sorted.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that required one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn check_axis(op: &'static str, axis: usize) -> Result<()> {
    if axis > 1 {
        return Err(Error::shape(op, format!("axis {axis} on a 2-D tensor")));
    }
    Ok(())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable input.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    fn zip(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_same(op, ta, tb)?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.rows(), ta.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    fn row_bcast(&self, op: &'static str, a: Var, row: Var) -> Result<()> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(Error::shape(
                op,
                format!("{:?} with row {:?}", ta.shape(), tr.shape()),
            ));
        }
        Ok(())
    }

    /// Adds a `1xC` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_bcast("add_row", a, row)?;
        let mut value = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..value.rows() {
            for (v, b) in value.row_mut(i).iter_mut().zip(&r) {
                *v += b;
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    /// Multiplies every row of `a` elementwise by a `1xC` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_bcast("mul_row", a, row)?;
        let mut value = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..value.rows() {
            for (v, g) in value.row_mut(i).iter_mut().zip(&r) {
                *v *= g;
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(value, Op::MulRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|v| v * s);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    /// Concatenates along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        check_axis("concat", axis)?;
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let shapes: Vec<[usize; 2]> = parts.iter().map(|&p| self.value(p).shape()).collect();
        let value = if axis == 1 {
            let rows = shapes[0][0];
            if shapes.iter().any(|s| s[0] != rows) {
                return Err(Error::shape(
                    "concat",
                    format!("row counts differ: {shapes:?}"),
                ));
            }
            let cols: usize = shapes.iter().map(|s| s[1]).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row(r));
                }
            }
            Tensor::new(rows, cols, data)?
        } else {
            let cols = shapes[0][1];
            if shapes.iter().any(|s| s[1] != cols) {
                return Err(Error::shape(
                    "concat",
                    format!("column counts differ: {shapes:?}"),
                ));
            }
            let rows: usize = shapes.iter().map(|s| s[0]).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::new(rows, cols, data)?
        };
        let rg = self.rg(parts);
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Row gather: output row `i` is input row `index[i]`.
    pub fn gather(&mut self, src: Var, index: Arc<Vec<usize>>) -> Result<Var> {
        let t = self.value(src);
        if let Some(&bad) = index.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::shape(
                "gather",
                format!("index {bad} out of range for {} rows", t.rows()),
            ));
        }
        let value = t.select_rows(&index);
        let rg = self.rg(&[src]);
        Ok(self.push(value, Op::Gather { src, index }, rg))
    }

    fn check_segment(&self, op: &'static str, src: Var, map: &PoolingMap) -> Result<()> {
        let n = self.value(src).rows();
        if n != map.n_fine() {
            return Err(Error::shape(
                op,
                format!("{n} rows but pooling map covers {}", map.n_fine()),
            ));
        }
        Ok(())
    }

    /// Per-coarse-row mean of the fine rows that map to it.
    pub fn segment_mean(&mut self, src: Var, map: Arc<PoolingMap>) -> Result<Var> {
        self.check_segment("segment_mean", src, &map)?;
        let t = self.value(src);
        let c = t.cols();
        let mut out = Tensor::zeros(map.n_coarse(), c);
        for (i, &p) in map.parent.iter().enumerate() {
            for (o, v) in out.row_mut(p).iter_mut().zip(t.row(i)) {
                *o += v;
            }
        }
        for (p, &cnt) in map.counts.iter().enumerate() {
            let inv = 1.0 / cnt as f64;
            for o in out.row_mut(p) {
                *o *= inv;
            }
        }
        let rg = self.rg(&[src]);
        Ok(self.push(out, Op::SegmentMean { src, map }, rg))
    }

    /// Per-coarse-row, per-column maximum (first occurrence wins ties).
    pub fn segment_max(&mut self, src: Var, map: &PoolingMap) -> Result<Var> {
        self.check_segment("segment_max", src, map)?;
        let t = self.value(src);
        let c = t.cols();
        let mut out = Tensor::filled(map.n_coarse(), c, f64::NEG_INFINITY);
        let mut argmax = vec![usize::MAX; map.n_coarse() * c];
        for (i, &p) in map.parent.iter().enumerate() {
            for j in 0..c {
                let v = t.get(i, j);
                if v > out.get(p, j) || argmax[p * c + j] == usize::MAX {
                    out.set(p, j, v);
                    argmax[p * c + j] = i;
                }
            }
        }
        let rg = self.rg(&[src]);
        Ok(self.push(out, Op::SegmentMax { src, argmax }, rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(gelu);
        let rg = self.rg(&[a]);
        self.push(value, Op::Gelu(a), rg)
    }

    fn row_layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let mut out = t.clone();
        let mut rstd = Vec::with_capacity(t.rows());
        for r in 0..t.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * s;
            }
            rstd.push(s);
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::LayerNorm { src: a, rstd }, rg)
    }

    fn along_axis(
        &mut self,
        op: &'static str,
        a: Var,
        axis: usize,
        f: impl FnOnce(&mut Self, Var) -> Var,
    ) -> Result<Var> {
        check_axis(op, axis)?;
        if axis == 1 {
            Ok(f(self, a))
        } else {
            let t = self.transpose(a);
            let y = f(self, t);
            Ok(self.transpose(y))
        }
    }

    /// Zero-mean, unit-variance normalisation along `axis` (no affine).
    pub fn layer_norm(&mut self, a: Var, axis: usize, eps: f64) -> Result<Var> {
        self.along_axis("layer_norm", a, axis, |t, v| t.row_layer_norm(v, eps))
    }

    fn row_softmax(&mut self, a: Var, log: bool) -> Var {
        let t = self.value(a);
        let mut out = t.clone();
        for r in 0..t.rows() {
            let row = out.row_mut(r);
            let m = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v = if log { *v - lse } else { (*v - lse).exp() };
            }
        }
        let rg = self.rg(&[a]);
        let op = if log {
            Op::LogSoftmax(a)
        } else {
            Op::Softmax(a)
        };
        self.push(out, op, rg)
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.along_axis("softmax", a, axis, |t, v| t.row_softmax(v, false))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.along_axis("log_softmax", a, axis, |t, v| t.row_softmax(v, true))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        let rg = self.rg(&[a]);
        self.push(value, Op::Log(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let rg = self.rg(&[a]);
        self.push(value, Op::Exp(a), rg)
    }

    fn row_l2_normalize(&mut self, a: Var, eps: f64) -> Var {
        let t = self.value(a);
        let mut out = t.clone();
        let mut norms = Vec::with_capacity(t.rows());
        for r in 0..t.rows() {
            let row = out.row_mut(r);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let inv = 1.0 / (n + eps);
            for v in row.iter_mut() {
                *v *= inv;
            }
            norms.push(n);
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::L2Normalize { src: a, eps, norms }, rg)
    }

    /// `x / (||x|| + eps)` along `axis`.
    pub fn l2_normalize(&mut self, a: Var, axis: usize, eps: f64) -> Result<Var> {
        self.along_axis("l2_normalize", a, axis, |t, v| t.row_l2_normalize(v, eps))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / t.len().max(1) as f64);
        let rg = self.rg(&[a]);
        self.push(value, Op::Mean(a), rg)
    }

    /// Sum along `axis`: `axis = 1` gives `Nx1`, `axis = 0` gives `1xC`.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        check_axis("sum_axis", axis)?;
        let t = self.value(a);
        let value = if axis == 1 {
            let data = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
            Tensor::new(t.rows(), 1, data)?
        } else {
            let mut out = Tensor::zeros(1, t.cols());
            for r in 0..t.rows() {
                for (o, v) in out.data_mut().iter_mut().zip(t.row(r)) {
                    *o += v;
                }
            }
            out
        };
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SumAxis { src: a, axis }, rg))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let n = if axis == 1 {
            self.value(a).cols()
        } else {
            self.value(a).rows()
        };
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, 1.0 / n.max(1) as f64))
    }

    /// Euclidean norm of each row, `Nx1`.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows())
            .map(|r| t.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let value = Tensor::new(t.rows(), 1, data).expect("row count matches");
        let rg = self.rg(&[a]);
        self.push(value, Op::RowNorm(a), rg)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lt.rows(), lt.cols(), 1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        // Only keep gradients for nodes that asked for them.
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    let acc = slot(grads, *a, val(*a));
                    gemm_acc(g, false, val(*b), true, acc, 1.0);
                }
                if wants(*b) {
                    let acc = slot(grads, *b, val(*b));
                    gemm_acc(val(*a), true, g, false, acc, 1.0);
                }
            }
            Op::Transpose(a) => {
                if wants(*a) {
                    slot(grads, *a, val(*a)).add_assign(&g.transpose());
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        slot(grads, v, val(v)).add_assign(g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    slot(grads, *a, val(*a)).add_assign(g);
                }
                if wants(*b) {
                    let acc = slot(grads, *b, val(*b));
                    for (o, d) in acc.data_mut().iter_mut().zip(g.data()) {
                        *o -= d;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if wants(*a) {
                    let acc = slot(grads, *a, ta);
                    for ((o, d), y) in acc.data_mut().iter_mut().zip(g.data()).zip(tb.data()) {
                        *o += d * y;
                    }
                }
                if wants(*b) {
                    let acc = slot(grads, *b, tb);
                    for ((o, d), x) in acc.data_mut().iter_mut().zip(g.data()).zip(ta.data()) {
                        *o += d * x;
                    }
                }
            }
            Op::AddRow(a, row) => {
                if wants(*a) {
                    slot(grads, *a, val(*a)).add_assign(g);
                }
                if wants(*row) {
                    let acc = slot(grads, *row, val(*row));
                    for r in 0..g.rows() {
                        for (o, d) in acc.data_mut().iter_mut().zip(g.row(r)) {
                            *o += d;
                        }
                    }
                }
            }
            Op::MulRow(a, row) => {
                let (ta, tr) = (val(*a), val(*row));
                if wants(*a) {
                    let mut d = g.clone();
                    for r in 0..d.rows() {
                        for (o, s) in d.row_mut(r).iter_mut().zip(tr.data()) {
                            *o *= s;
                        }
                    }
                    slot(grads, *a, ta).add_assign(&d);
                }
                if wants(*row) {
                    let mut d = Tensor::zeros(1, tr.cols());
                    for r in 0..g.rows() {
                        for ((o, dy), x) in d.data_mut().iter_mut().zip(g.row(r)).zip(ta.row(r)) {
                            *o += dy * x;
                        }
                    }
                    slot(grads, *row, tr).add_assign(&d);
                }
            }
            Op::Scale(a, s) => {
                if wants(*a) {
                    let acc = slot(grads, *a, val(*a));
                    for (o, d) in acc.data_mut().iter_mut().zip(g.data()) {
                        *o += s * d;
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let mut offset = 0;
                for &p in parts {
                    let shape = val(p).shape();
                    if wants(p) {
                        let acc = slot(grads, p, val(p));
                        if *axis == 1 {
                            for r in 0..shape[0] {
                                let src = &g.row(r)[offset..offset + shape[1]];
                                for (o, d) in acc.row_mut(r).iter_mut().zip(src) {
                                    *o += d;
                                }
                            }
                        } else {
                            let cols = shape[1];
                            let src = &g.data()[offset * cols..(offset + shape[0]) * cols];
                            for (o, d) in acc.data_mut().iter_mut().zip(src) {
                                *o += d;
                            }
                        }
                    }
                    offset += if *axis == 1 { shape[1] } else { shape[0] };
                }
            }
            Op::Gather { src, index } => {
                if wants(*src) {
                    let acc = slot(grads, *src, val(*src));
                    for (i, &j) in index.iter().enumerate() {
                        for (o, d) in acc.row_mut(j).iter_mut().zip(g.row(i)) {
                            *o += d;
                        }
                    }
                }
            }
            Op::SegmentMean { src, map } => {
                if wants(*src) {
                    let acc = slot(grads, *src, val(*src));
                    for (i, &p) in map.parent.iter().enumerate() {
                        let inv = 1.0 / map.counts[p] as f64;
                        for (o, d) in acc.row_mut(i).iter_mut().zip(g.row(p)) {
                            *o += d * inv;
                        }
                    }
                }
            }
            Op::SegmentMax { src, argmax } => {
                if wants(*src) {
                    let c = g.cols();
                    let acc = slot(grads, *src, val(*src));
                    for (k, &i) in argmax.iter().enumerate() {
                        let (p, j) = (k / c, k % c);
                        let cur = acc.get(i, j);
                        acc.set(i, j, cur + g.get(p, j));
                    }
                }
            }
            Op::Relu(a) => {
                if wants(*a) {
                    let x = val(*a);
                    let acc = slot(grads, *a, x);
                    for ((o, d), &xv) in acc.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
                        if xv > 0.0 {
                            *o += d;
                        }
                    }
                }
            }
            Op::Gelu(a) => {
                if wants(*a) {
                    let x = val(*a);
                    let acc = slot(grads, *a, x);
                    for ((o, d), &xv) in acc.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
                        *o += d * gelu_grad(xv);
                    }
                }
            }
            Op::LayerNorm { src, rstd } => {
                if wants(*src) {
                    let y = &node.value;
                    let c = y.cols() as f64;
                    let acc = slot(grads, *src, val(*src));
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let mg = gr.iter().sum::<f64>() / c;
                        let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c;
                        for ((o, &d), &yv) in acc.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *o += rstd[r] * (d - mg - yv * mgy);
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                if wants(*a) {
                    let y = &node.value;
                    let acc = slot(grads, *a, val(*a));
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, &d), &yv) in acc.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *o += yv * (d - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                if wants(*a) {
                    let y = &node.value;
                    let acc = slot(grads, *a, val(*a));
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let total: f64 = gr.iter().sum();
                        for ((o, &d), &yv) in acc.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *o += d - yv.exp() * total;
                        }
                    }
                }
            }
            Op::Log(a) => {
                if wants(*a) {
                    let x = val(*a);
                    let acc = slot(grads, *a, x);
                    for ((o, d), &xv) in acc.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
                        *o += d / xv;
                    }
                }
            }
            Op::Exp(a) => {
                if wants(*a) {
                    let y = &node.value;
                    let acc = slot(grads, *a, val(*a));
                    for ((o, d), &yv) in acc.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *o += d * yv;
                    }
                }
            }
            Op::L2Normalize { src, eps, norms } => {
                if wants(*src) {
                    let x = val(*src);
                    let acc = slot(grads, *src, x);
                    for r in 0..x.rows() {
                        let (xr, gr) = (x.row(r), g.row(r));
                        let n = norms[r];
                        let inv = 1.0 / (n + eps);
                        let coef = if n > 0.0 {
                            xr.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>() * inv * inv / n
                        } else {
                            0.0
                        };
                        for ((o, &d), &xv) in acc.row_mut(r).iter_mut().zip(gr).zip(xr) {
                            *o += d * inv - xv * coef;
                        }
                    }
                }
            }
            Op::Sum(a) | Op::Mean(a) => {
                if wants(*a) {
                    let x = val(*a);
                    let scale = if matches!(node.op, Op::Mean(_)) {
                        1.0 / x.len().max(1) as f64
                    } else {
                        1.0
                    };
                    let d = g.item() * scale;
                    let acc = slot(grads, *a, x);
                    for o in acc.data_mut() {
                        *o += d;
                    }
                }
            }
            Op::SumAxis { src, axis } => {
                if wants(*src) {
                    let acc = slot(grads, *src, val(*src));
                    for r in 0..acc.rows() {
                        let row = acc.row_mut(r);
                        if *axis == 1 {
                            let d = g.get(r, 0);
                            row.iter_mut().for_each(|o| *o += d);
                        } else {
                            for (o, d) in row.iter_mut().zip(g.data()) {
                                *o += d;
                            }
                        }
                    }
                }
            }
            Op::RowNorm(a) => {
                if wants(*a) {
                    let x = val(*a);
                    let y = &node.value;
                    let acc = slot(grads, *a, x);
                    for r in 0..x.rows() {
                        let n = y.get(r, 0);
                        if n > 0.0 {
                            let d = g.get(r, 0) / n;
                            for (o, xv) in acc.row_mut(r).iter_mut().zip(x.row(r)) {
                                *o += d * xv;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn slot<'g>(grads: &'g mut [Option<Tensor>], v: Var, like: &Tensor) -> &'g mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(like.rows(), like.cols()))
}
