//! Reverse-mode gradient tape over dense matrices.
//!
//! Every operation appends a node holding its forward value and the data its
//! backward rule needs. Nodes only ever reference earlier nodes, so walking
//! the tape backwards visits each node after all of its consumers.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use super::params::{ParamId, ParamSet};
use super::Matrix;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf { param: Option<ParamId> },
    Linear { x: usize, w: usize, b: Option<usize> },
    Relu { x: usize },
    LayerNorm { x: usize, gain: usize, shift: usize, xhat: Matrix, inv_std: Vec<f64> },
    BatchNorm { x: usize, gain: usize, shift: usize, xhat: Matrix, inv_std: Vec<f64> },
    FrozenNorm { x: usize, gain: usize, shift: usize, xhat: Matrix, inv_std: Vec<f64> },
    Dropout { x: usize, mask: Vec<f64> },
    GatherRows { x: usize, idx: Vec<usize> },
    ConcatCols { parts: Vec<usize> },
    BlockTranspose { x: usize },
    Reshape { x: usize },
    SegmentMax { x: usize, argmax: Vec<usize> },
    SegmentMean { x: usize, seg: usize },
    SoftmaxXent { x: usize, labels: Vec<usize>, probs: Matrix },
    SumSquares { x: usize, target: Matrix },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Batch statistics produced by a training-mode batch norm, for updating running averages.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Input that gradients are not propagated into.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf { param: None }, false)
    }

    /// Input whose gradient is reported by [`Tape::backward`].
    pub fn variable(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf { param: None }, true)
    }

    /// Leaf for a parameter tensor; repeated calls for the same id share one node.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(params.get(id).clone(), Op::Leaf { param: Some(id) }, true);
        self.params.insert(id, v);
        v
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.0 >= self.nodes.len() {
            return Err(Error::GraphCycle { node: self.nodes.len(), input: v.0 });
        }
        Ok(v.0)
    }

    fn needs(&self, inputs: &[usize]) -> bool {
        inputs.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// `y = x·Wᵀ + b` with `W` of shape out×in and `b` of shape 1×out.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xi, wi) = (self.check(x)?, self.check(w)?);
        let bi = b.map(|b| self.check(b)).transpose()?;
        let (xv, wv) = (&self.nodes[xi].value, &self.nodes[wi].value);
        if xv.cols() != wv.cols() {
            return Err(Error::shape(
                "linear",
                format!("input {:?} with weight {:?}", xv.shape(), wv.shape()),
            ));
        }
        let mut y = xv.matmul_nt(wv)?;
        if let Some(bi) = bi {
            let bv = &self.nodes[bi].value;
            if bv.shape() != (1, wv.rows()) {
                return Err(Error::shape("linear", format!("bias {:?}", bv.shape())));
            }
            let bias = bv.data();
            for r in 0..y.rows() {
                for (o, bb) in y.row_mut(r).iter_mut().zip(bias) {
                    *o += bb;
                }
            }
        }
        let mut ins = vec![xi, wi];
        ins.extend(bi);
        let rg = self.needs(&ins);
        Ok(self.push(y, Op::Linear { x: xi, w: wi, b: bi }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xi = self.check(x)?;
        let y = self.nodes[xi].value.map(|v| v.max(0.0));
        let rg = self.needs(&[xi]);
        Ok(self.push(y, Op::Relu { x: xi }, rg))
    }

    fn norm_params(&self, op: &'static str, c: usize, gain: usize, shift: usize) -> Result<()> {
        for (name, i) in [("gain", gain), ("shift", shift)] {
            if self.nodes[i].value.shape() != (1, c) {
                return Err(Error::shape(
                    op,
                    format!("{name} {:?} for {c} channels", self.nodes[i].value.shape()),
                ));
            }
        }
        Ok(())
    }

    fn affine(xhat: &Matrix, gain: &Matrix, shift: &Matrix) -> Matrix {
        let (g, s) = (gain.data(), shift.data());
        let mut y = xhat.clone();
        for r in 0..y.rows() {
            for ((v, gg), ss) in y.row_mut(r).iter_mut().zip(g).zip(s) {
                *v = *v * gg + ss;
            }
        }
        y
    }

    /// Per-row standardization followed by a per-channel affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var) -> Result<Var> {
        let (xi, gi, si) = (self.check(x)?, self.check(gain)?, self.check(shift)?);
        let xv = &self.nodes[xi].value;
        let c = xv.cols();
        self.norm_params("layer_norm", c, gi, si)?;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = xhat.row_mut(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + NORM_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        let y = Self::affine(&xhat, &self.nodes[gi].value, &self.nodes[si].value);
        let rg = self.needs(&[xi, gi, si]);
        Ok(self.push(y, Op::LayerNorm { x: xi, gain: gi, shift: si, xhat, inv_std }, rg))
    }

    /// Per-channel standardization over all rows using the batch's own statistics.
    pub fn batch_norm(&mut self, x: Var, gain: Var, shift: Var) -> Result<(Var, BatchStats)> {
        let (xi, gi, si) = (self.check(x)?, self.check(gain)?, self.check(shift)?);
        let xv = &self.nodes[xi].value;
        let (n, c) = xv.shape();
        self.norm_params("batch_norm", c, gi, si)?;
        if n == 0 {
            return Err(Error::shape("batch_norm", "no rows"));
        }
        let mean: Vec<f64> = xv.col_sums().into_iter().map(|s| s / n as f64).collect();
        let mut var = vec![0.0; c];
        for r in 0..n {
            for ((acc, v), m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let xhat = standardize(xv, &mean, &inv_std);
        let y = Self::affine(&xhat, &self.nodes[gi].value, &self.nodes[si].value);
        let rg = self.needs(&[xi, gi, si]);
        let v = self.push(y, Op::BatchNorm { x: xi, gain: gi, shift: si, xhat, inv_std }, rg);
        Ok((v, BatchStats { mean, var }))
    }

    /// Per-channel standardization with fixed statistics (batch norm in eval mode).
    pub fn frozen_norm(
        &mut self,
        x: Var,
        gain: Var,
        shift: Var,
        mean: &[f64],
        var: &[f64],
    ) -> Result<Var> {
        let (xi, gi, si) = (self.check(x)?, self.check(gain)?, self.check(shift)?);
        let xv = &self.nodes[xi].value;
        let c = xv.cols();
        self.norm_params("frozen_norm", c, gi, si)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::shape("frozen_norm", "running statistics length"));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let xhat = standardize(xv, mean, &inv_std);
        let y = Self::affine(&xhat, &self.nodes[gi].value, &self.nodes[si].value);
        let rg = self.needs(&[xi, gi, si]);
        Ok(self.push(y, Op::FrozenNorm { x: xi, gain: gi, shift: si, xhat, inv_std }, rg))
    }

    /// Elementwise multiplication by a fixed mask (already including the inverted-dropout scale).
    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let xi = self.check(x)?;
        let xv = &self.nodes[xi].value;
        if mask.len() != xv.len() {
            return Err(Error::shape("dropout", format!("mask {} for {}", mask.len(), xv.len())));
        }
        let mut y = xv.clone();
        y.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        let rg = self.needs(&[xi]);
        Ok(self.push(y, Op::Dropout { x: xi, mask }, rg))
    }

    /// Output row `r` is input row `idx[r]`.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let xi = self.check(x)?;
        let xv = &self.nodes[xi].value;
        let c = xv.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            if i >= xv.rows() {
                return Err(Error::shape("gather_rows", format!("row {i} of {}", xv.rows())));
            }
            data.extend_from_slice(xv.row(i));
        }
        let y = Matrix::new(idx.len(), c, data)?;
        let rg = self.needs(&[xi]);
        Ok(self.push(y, Op::GatherRows { x: xi, idx }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let idx: Vec<usize> = parts.iter().map(|&p| self.check(p)).collect::<Result<_>>()?;
        let Some(&first) = idx.first() else {
            return Err(Error::shape("concat_cols", "no inputs"));
        };
        let rows = self.nodes[first].value.rows();
        if idx.iter().any(|&i| self.nodes[i].value.rows() != rows) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let cols: usize = idx.iter().map(|&i| self.nodes[i].value.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &i in &idx {
                data.extend_from_slice(self.nodes[i].value.row(r));
            }
        }
        let y = Matrix::new(rows, cols, data)?;
        let rg = self.needs(&idx);
        Ok(self.push(y, Op::ConcatCols { parts: idx }, rg))
    }

    /// Transposes each consecutive block of `block_rows` rows: (B·r)×c becomes (B·c)×r.
    pub fn block_transpose(&mut self, x: Var, block_rows: usize) -> Result<Var> {
        let xi = self.check(x)?;
        let xv = &self.nodes[xi].value;
        if block_rows == 0 || !xv.rows().is_multiple_of(block_rows) {
            return Err(Error::shape(
                "block_transpose",
                format!("{} rows in blocks of {block_rows}", xv.rows()),
            ));
        }
        let y = block_transpose(xv, block_rows);
        let rg = self.needs(&[xi]);
        Ok(self.push(y, Op::BlockTranspose { x: xi }, rg))
    }

    /// Reinterprets the row-major data under a new shape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let xi = self.check(x)?;
        let y = self.nodes[xi].value.clone().reshaped(rows, cols)?;
        let rg = self.needs(&[xi]);
        Ok(self.push(y, Op::Reshape { x: xi }, rg))
    }

    /// Channel-wise max over consecutive segments of `seg` rows.
    pub fn segment_max(&mut self, x: Var, seg: usize) -> Result<Var> {
        let xi = self.check(x)?;
        let xv = &self.nodes[xi].value;
        let (n, c) = xv.shape();
        if seg == 0 || n % seg != 0 {
            return Err(Error::shape("segment_max", format!("{n} rows in segments of {seg}")));
        }
        let groups = n / seg;
        let mut y = Matrix::zeros(groups, c);
        let mut argmax = vec![0; groups * c];
        for g in 0..groups {
            for ch in 0..c {
                let mut best = g * seg;
                for r in g * seg + 1..(g + 1) * seg {
                    if xv.get(r, ch) > xv.get(best, ch) {
                        best = r;
                    }
                }
                y.set(g, ch, xv.get(best, ch));
                argmax[g * c + ch] = best;
            }
        }
        let rg = self.needs(&[xi]);
        Ok(self.push(y, Op::SegmentMax { x: xi, argmax }, rg))
    }

    /// Channel-wise mean over consecutive segments of `seg` rows.
    pub fn segment_mean(&mut self, x: Var, seg: usize) -> Result<Var> {
        let xi = self.check(x)?;
        let xv = &self.nodes[xi].value;
        let (n, c) = xv.shape();
        if seg == 0 || n % seg != 0 {
            return Err(Error::shape("segment_mean", format!("{n} rows in segments of {seg}")));
        }
        let mut y = Matrix::zeros(n / seg, c);
        for r in 0..n {
            let g = r / seg;
            for ch in 0..c {
                y.data_mut()[g * c + ch] += xv.get(r, ch);
            }
        }
        y.scale(1.0 / seg as f64);
        let rg = self.needs(&[xi]);
        Ok(self.push(y, Op::SegmentMean { x: xi, seg }, rg))
    }

    /// Mean softmax cross-entropy over the rows of `logits`; yields a 1×1 node.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let xi = self.check(logits)?;
        let xv = &self.nodes[xi].value;
        let (n, k) = xv.shape();
        if labels.len() != n || n == 0 {
            return Err(Error::shape("softmax_xent", format!("{} labels for {n} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::shape("softmax_xent", format!("label {bad} with {k} classes")));
        }
        let mut probs = Matrix::zeros(n, k);
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = xv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - row[label];
            for (p, v) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let y = Matrix::row_vector(vec![loss / n as f64]);
        let rg = self.needs(&[xi]);
        Ok(self.push(y, Op::SoftmaxXent { x: xi, labels: labels.to_vec(), probs }, rg))
    }

    /// `Σ (x − target)²` as a 1×1 node.
    pub fn sum_squares(&mut self, x: Var, target: Matrix) -> Result<Var> {
        let xi = self.check(x)?;
        let xv = &self.nodes[xi].value;
        if xv.shape() != target.shape() {
            return Err(Error::shape("sum_squares", "target shape"));
        }
        let loss = xv.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        let rg = self.needs(&[xi]);
        Ok(self.push(Matrix::row_vector(vec![loss]), Op::SumSquares { x: xi, target }, rg))
    }

    /// Hash of every piecewise-linear branch taken in the forward pass
    /// (ReLU signs and max-pool winners). Equal signatures mean two forward
    /// passes lie on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { .. } => {
                    for v in node.value.data() {
                        (*v > 0.0).hash(&mut h);
                    }
                }
                Op::SegmentMax { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse-mode sweep from a scalar (1×1) node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let li = self.check(loss)?;
        if self.nodes[li].value.shape() != (1, 1) {
            return Err(Error::shape("backward", "loss must be 1x1"));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[li] = Some(Matrix::filled(1, 1, 1.0));
        for i in (0..=li).rev() {
            let (lower, upper) = grads.split_at_mut(i);
            let Some(dy) = upper[0].as_ref() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(i, &node.op, dy, lower)?;
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Leaf { param: Some(p) } => Some((p, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { nodes: grads, params })
    }

    fn propagate(&self, i: usize, op: &Op, dy: &Matrix, lower: &mut [Option<Matrix>]) -> Result<()> {
        let val = |j: usize| &self.nodes[j].value;
        let wants = |j: usize| self.nodes[j].requires_grad;
        let mut acc = |j: usize, g: Matrix| -> Result<()> {
            if j >= i {
                return Err(Error::GraphCycle { node: i, input: j });
            }
            match &mut lower[j] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
            Ok(())
        };
        match op {
            Op::Leaf { .. } => {}
            Op::Linear { x, w, b } => {
                if wants(*x) {
                    acc(*x, dy.matmul(val(*w))?)?;
                }
                if wants(*w) {
                    acc(*w, dy.matmul_tn(val(*x))?)?;
                }
                if let Some(b) = b {
                    if wants(*b) {
                        acc(*b, Matrix::row_vector(dy.col_sums()))?;
                    }
                }
            }
            Op::Relu { x } => {
                let y = &self.nodes[i].value;
                let mut dx = dy.clone();
                dx.data_mut().iter_mut().zip(y.data()).for_each(|(g, &v)| {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                });
                acc(*x, dx)?;
            }
            Op::LayerNorm { x, gain, shift, xhat, inv_std } => {
                let g = val(*gain).data();
                let (n, c) = xhat.shape();
                if wants(*gain) {
                    acc(*gain, Matrix::row_vector(col_sums_product(dy, xhat)))?;
                }
                if wants(*shift) {
                    acc(*shift, Matrix::row_vector(dy.col_sums()))?;
                }
                if wants(*x) {
                    let mut dx = Matrix::zeros(n, c);
                    let mut dxhat = vec![0.0; c];
                    for r in 0..n {
                        let (dyr, xr) = (dy.row(r), xhat.row(r));
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for ch in 0..c {
                            dxhat[ch] = dyr[ch] * g[ch];
                            s1 += dxhat[ch];
                            s2 += dxhat[ch] * xr[ch];
                        }
                        let scale = inv_std[r] / c as f64;
                        for (ch, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = scale * (c as f64 * dxhat[ch] - s1 - xr[ch] * s2);
                        }
                    }
                    acc(*x, dx)?;
                }
            }
            Op::BatchNorm { x, gain, shift, xhat, inv_std } => {
                let g = val(*gain).data();
                let (n, c) = xhat.shape();
                let s2 = col_sums_product(dy, xhat);
                let s1 = dy.col_sums();
                if wants(*x) {
                    let mut dx = Matrix::zeros(n, c);
                    for r in 0..n {
                        let (dyr, xr) = (dy.row(r), xhat.row(r));
                        for (ch, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = g[ch] * inv_std[ch] / n as f64
                                * (n as f64 * dyr[ch] - s1[ch] - xr[ch] * s2[ch]);
                        }
                    }
                    acc(*x, dx)?;
                }
                if wants(*gain) {
                    acc(*gain, Matrix::row_vector(s2))?;
                }
                if wants(*shift) {
                    acc(*shift, Matrix::row_vector(s1))?;
                }
            }
            Op::FrozenNorm { x, gain, shift, xhat, inv_std } => {
                let g = val(*gain).data();
                if wants(*x) {
                    let mut dx = dy.clone();
                    for r in 0..dx.rows() {
                        for (ch, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o *= g[ch] * inv_std[ch];
                        }
                    }
                    acc(*x, dx)?;
                }
                if wants(*gain) {
                    acc(*gain, Matrix::row_vector(col_sums_product(dy, xhat)))?;
                }
                if wants(*shift) {
                    acc(*shift, Matrix::row_vector(dy.col_sums()))?;
                }
            }
            Op::Dropout { x, mask } => {
                let mut dx = dy.clone();
                dx.data_mut().iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
                acc(*x, dx)?;
            }
            Op::GatherRows { x, idx } => {
                let mut dx = Matrix::zeros(val(*x).rows(), val(*x).cols());
                for (r, &src) in idx.iter().enumerate() {
                    for (o, g) in dx.row_mut(src).iter_mut().zip(dy.row(r)) {
                        *o += g;
                    }
                }
                acc(*x, dx)?;
            }
            Op::ConcatCols { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let c = val(p).cols();
                    if wants(p) {
                        let dx = Matrix::from_fn(dy.rows(), c, |r, ch| dy.get(r, offset + ch));
                        acc(p, dx)?;
                    }
                    offset += c;
                }
            }
            Op::BlockTranspose { x } => {
                acc(*x, block_transpose(dy, val(*x).cols()))?;
            }
            Op::Reshape { x } => {
                let (r, c) = val(*x).shape();
                acc(*x, dy.clone().reshaped(r, c)?)?;
            }
            Op::SegmentMax { x, argmax } => {
                let mut dx = Matrix::zeros(val(*x).rows(), val(*x).cols());
                let c = dx.cols();
                for (flat, &src) in argmax.iter().enumerate() {
                    let ch = flat % c;
                    dx.data_mut()[src * c + ch] += dy.data()[flat];
                }
                acc(*x, dx)?;
            }
            Op::SegmentMean { x, seg } => {
                let (n, c) = val(*x).shape();
                let inv = 1.0 / *seg as f64;
                let dx = Matrix::from_fn(n, c, |r, ch| dy.get(r / seg, ch) * inv);
                acc(*x, dx)?;
            }
            Op::SoftmaxXent { x, labels, probs } => {
                let scale = dy.get(0, 0) / labels.len() as f64;
                let mut dx = probs.clone();
                for (r, &l) in labels.iter().enumerate() {
                    dx.data_mut()[r * probs.cols() + l] -= 1.0;
                }
                dx.scale(scale);
                acc(*x, dx)?;
            }
            Op::SumSquares { x, target } => {
                let g = dy.get(0, 0);
                let mut dx = val(*x).clone();
                dx.data_mut().iter_mut().zip(target.data()).for_each(|(v, t)| *v = 2.0 * g * (*v - t));
                acc(*x, dx)?;
            }
        }
        Ok(())
    }
}

fn standardize(x: &Matrix, mean: &[f64], inv_std: &[f64]) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        for ((v, m), s) in out.row_mut(r).iter_mut().zip(mean).zip(inv_std) {
            *v = (*v - m) * s;
        }
    }
    out
}

fn col_sums_product(a: &Matrix, b: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; a.cols()];
    for r in 0..a.rows() {
        for ((o, x), y) in out.iter_mut().zip(a.row(r)).zip(b.row(r)) {
            *o += x * y;
        }
    }
    out
}

pub(crate) fn block_transpose(x: &Matrix, block_rows: usize) -> Matrix {
    let (n, c) = x.shape();
    let blocks = n / block_rows;
    let mut out = Matrix::zeros(blocks * c, block_rows);
    let od = out.data_mut();
    let xd = x.data();
    for b in 0..blocks {
        for i in 0..block_rows {
            let src = &xd[(b * block_rows + i) * c..(b * block_rows + i + 1) * c];
            for (j, v) in src.iter().enumerate() {
                od[(b * c + j) * block_rows + i] = *v;
            }
        }
    }
    out
}

/// Gradients from one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Matrix>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to a node, if any flowed into it.
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Matrix> {
        self.params.iter().find(|(p, _)| *p == id).and_then(|&(_, i)| self.nodes[i].as_ref())
    }

    /// Per-parameter gradients indexed by [`ParamId`]; parameters absent from the tape get `None`.
    pub fn into_param_grads(mut self, count: usize) -> Vec<Option<Matrix>> {
        let mut out: Vec<Option<Matrix>> = (0..count).map(|_| None).collect();
        for (p, i) in self.params {
            if p.0 < count {
                out[p.0] = self.nodes[i].take();
            }
        }
        out
    }
}
