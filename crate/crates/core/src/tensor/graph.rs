//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value and
//! the indices of its inputs, so the tape order is already topological. The
//! backward sweep walks it once, from the loss node down to the first leaf.
//! Graphs are cheap to build and are meant to be rebuilt for every sample.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{ModelParams, Tensor};

/// Handle to a node of one particular [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// `a · b`, or `a · bᵀ` when `trans_b` (b stored as n×k).
    MatMul { a: Var, b: Var, trans_b: bool },
    Transpose(Var),
    Add(Var, Var),
    /// Matrix plus a row vector repeated over every row.
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Sum(Var),
    Concat(Vec<Var>),
    SliceCols { a: Var, start: usize },
    SelectRows { a: Var, rows: Vec<usize> },
    SegmentSum { a: Var, segments: Vec<Vec<usize>> },
    Reshape(Var),
    Max { inputs: Vec<Var>, argmax: Vec<usize> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Pointwise operation selector for [`Graph::pointwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pointwise {
    Add,
    Mul,
    Sigmoid,
    Tanh,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Parameters registered on a graph, addressable by name.
#[derive(Debug, Clone, Default)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::dim(format!("parameter {name:?} is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient of every bound parameter; parameters that do not reach the
    /// loss get an all-zero tensor.
    pub fn for_params(&self, graph: &Graph, bound: &BoundParams) -> ModelParams {
        bound
            .iter()
            .map(|(name, var)| {
                let shape = graph.value(var).shape().to_vec();
                let data = match self.get(var) {
                    Some(g) => g.to_vec(),
                    None => vec![0.0; shape.iter().product()],
                };
                (name.to_string(), Tensor::from_parts_unchecked(shape, data))
            })
            .collect()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `c (+)= op(a) · op(b)` with row-major storage; `op` transposes when flagged.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths match the m×k, k×n and m×n extents asserted above,
    // and the strides address only elements inside those slices.
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
            n as isize,
            1,
        );
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Input that is not differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that receives a gradient.
    pub fn parameter(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Registers every tensor of `params` as a parameter leaf.
    pub fn bind(&mut self, params: &ModelParams) -> BoundParams {
        let vars = params
            .iter()
            .map(|(name, t)| (name.to_string(), self.parameter(t.clone())))
            .collect();
        BoundParams { vars }
    }

    /// Like [`Graph::bind`], but tensors rejected by `trainable` become
    /// constants: they take part in the forward pass and get no gradient.
    pub fn bind_trainable(&mut self, params: &ModelParams, trainable: impl Fn(&str) -> bool) -> BoundParams {
        let vars = params
            .iter()
            .map(|(name, t)| {
                let var = if trainable(name) {
                    self.parameter(t.clone())
                } else {
                    self.constant(t.clone())
                };
                (name.to_string(), var)
            })
            .collect();
        BoundParams { vars }
    }

    fn matrix_dims(&self, var: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(var) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::dim(format!("{what} expects a matrix, got shape {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul inner dimensions differ: {:?} · {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let rg = self.needs(&[a, b]);
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![m, n], out),
            Op::MatMul { a, b, trans_b: false },
            rg,
        ))
    }

    /// `a · bᵀ` without materialising the transpose; `b` is n×k.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul_nt")?;
        let (n, k2) = self.matrix_dims(b, "matmul_nt")?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul_nt inner dimensions differ: {:?} · {:?}ᵀ",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), true, &mut out, false);
        let rg = self.needs(&[a, b]);
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![m, n], out),
            Op::MatMul { a, b, trans_b: true },
            rg,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims(a, "transpose")?;
        let src = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::from_parts_unchecked(vec![c, r], out), Op::Transpose(a), rg))
    }

    pub fn pointwise(&mut self, op: Pointwise, a: Var, b: Option<Var>) -> Result<Var> {
        match (op, b) {
            (Pointwise::Add, Some(b)) => self.add(a, b),
            (Pointwise::Mul, Some(b)) => self.mul(a, b),
            (Pointwise::Sigmoid, None) => Ok(self.sigmoid(a)),
            (Pointwise::Tanh, None) => Ok(self.tanh(a)),
            (op, _) => Err(Error::usage(format!("wrong operand count for {op:?}"))),
        }
    }

    /// Exact-shape addition, or matrix plus row vector.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa == sb {
            let data = self
                .value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(x, y)| x + y)
                .collect();
            let rg = self.needs(&[a, b]);
            return Ok(self.push(Tensor::from_parts_unchecked(sa, data), Op::Add(a, b), rg));
        }
        if sa.len() == 2 && sb.len() == 1 && sa[1] == sb[0] {
            let cols = sa[1];
            let row = self.value(b).data();
            let data = self
                .value(a)
                .data()
                .iter()
                .enumerate()
                .map(|(idx, x)| x + row[idx % cols])
                .collect();
            let rg = self.needs(&[a, b]);
            return Ok(self.push(Tensor::from_parts_unchecked(sa, data), Op::AddRow(a, b), rg));
        }
        Err(Error::dim(format!("cannot add shapes {sa:?} and {sb:?}")))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa != self.shape(b) {
            return Err(Error::dim(format!(
                "elementwise product needs equal shapes, got {sa:?} and {:?}",
                self.shape(b)
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::from_parts_unchecked(sa, data), Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a);
        let data = v.data().iter().map(|x| x * factor).collect();
        let t = Tensor::from_parts_unchecked(v.shape().to_vec(), data);
        let rg = self.needs(&[a]);
        self.push(t, Op::Scale(a, factor), rg)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::from_parts_unchecked(v.shape().to_vec(), data);
        let rg = self.needs(&[a]);
        self.push(t, op, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    /// Sum of all elements, as a `[1]` scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Concatenation along the last axis.
    ///
    /// Parts must be all vectors, or all matrices with the same row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::usage("concat needs at least one part"))?;
        let rank = self.value(first).rank();
        let rows = match self.shape(first) {
            [_] => 1,
            [r, _] => *r,
            s => return Err(Error::dim(format!("concat does not support shape {s:?}"))),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let ok = match (rank, s) {
                (1, [_]) => true,
                (2, [r, _]) => *r == rows,
                _ => false,
            };
            if !ok {
                return Err(Error::dim(format!(
                    "concat parts disagree: {:?} vs {:?}",
                    self.shape(first),
                    s
                )));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let shape = if rank == 1 { vec![total] } else { vec![rows, total] };
        let rg = self.needs(parts);
        Ok(self.push(Tensor::from_parts_unchecked(shape, out), Op::Concat(parts.to_vec()), rg))
    }

    /// Columns `start..start + len` of a vector or matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self
            .value(a)
            .as_matrix_dims()
            .ok_or_else(|| Error::dim("slice_cols expects rank 1 or 2"))?;
        if len == 0 || start + len > cols {
            return Err(Error::dim(format!(
                "column slice {start}..{} out of range for width {cols}",
                start + len
            )));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let shape = if self.value(a).rank() == 1 { vec![len] } else { vec![rows, len] };
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::from_parts_unchecked(shape, out), Op::SliceCols { a, start }, rg))
    }

    /// Gathers rows of a matrix (repeats allowed).
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (n, cols) = self.matrix_dims(a, "select_rows")?;
        if rows.is_empty() {
            return Err(Error::usage("select_rows needs at least one row"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::dim(format!("row {bad} out of range for {n} rows")));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            out.extend_from_slice(&src[r * cols..(r + 1) * cols]);
        }
        let rg = self.needs(&[a]);
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![rows.len(), cols], out),
            Op::SelectRows {
                a,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let r = self.select_rows(a, &[i])?;
        let cols = self.shape(r)[1];
        self.reshape(r, &[cols])
    }

    /// Output row `s` is the sum of the input rows listed in `segments[s]`;
    /// an empty segment yields an exact zero row.
    pub fn segment_sum(&mut self, a: Var, segments: &[Vec<usize>]) -> Result<Var> {
        let (n, cols) = self.matrix_dims(a, "segment_sum")?;
        if segments.is_empty() {
            return Err(Error::usage("segment_sum needs at least one segment"));
        }
        let src = self.value(a).data();
        let mut out = vec![0.0; segments.len() * cols];
        for (s, members) in segments.iter().enumerate() {
            let dst = &mut out[s * cols..(s + 1) * cols];
            for &r in members {
                if r >= n {
                    return Err(Error::dim(format!("row {r} out of range for {n} rows")));
                }
                for (d, v) in dst.iter_mut().zip(&src[r * cols..(r + 1) * cols]) {
                    *d += *v;
                }
            }
        }
        let rg = self.needs(&[a]);
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![segments.len(), cols], out),
            Op::SegmentSum {
                a,
                segments: segments.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape.to_vec())?;
        let rg = self.needs(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Coordinate-wise maximum of equally shaped inputs. The gradient goes to
    /// the maximal input only; on ties the first-listed input wins.
    pub fn elementwise_max(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::usage("elementwise_max needs at least one input"))?;
        let shape = self.shape(first).to_vec();
        if let Some(&bad) = inputs.iter().find(|&&v| self.shape(v) != shape.as_slice()) {
            return Err(Error::dim(format!(
                "elementwise_max inputs differ: {shape:?} vs {:?}",
                self.shape(bad)
            )));
        }
        let mut out = self.value(first).data().to_vec();
        let mut argmax = vec![0usize; out.len()];
        for (k, &v) in inputs.iter().enumerate().skip(1) {
            for ((o, am), &x) in out.iter_mut().zip(argmax.iter_mut()).zip(self.value(v).data()) {
                if x > *o {
                    *o = x;
                    *am = k;
                }
            }
        }
        let rg = self.needs(inputs);
        Ok(self.push(
            Tensor::from_parts_unchecked(shape, out),
            Op::Max {
                inputs: inputs.to_vec(),
                argmax,
            },
            rg,
        ))
    }

    /// `-ln softmax(logits)[label]` for a logit vector.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        if self.value(logits).rank() != 1 {
            return Err(Error::dim(format!(
                "softmax_cross_entropy expects a vector, got {:?}",
                self.shape(logits)
            )));
        }
        self.softmax_cross_entropy_mean(logits, &[label])
    }

    /// Mean cross-entropy over the rows of a logit matrix (or a single vector).
    pub fn softmax_cross_entropy_mean(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (rows, k) = self
            .value(logits)
            .as_matrix_dims()
            .ok_or_else(|| Error::dim("cross-entropy expects rank 1 or 2 logits"))?;
        if k < 2 {
            return Err(Error::usage(format!("cross-entropy needs at least 2 classes, got {k}")));
        }
        if labels.len() != rows {
            return Err(Error::dim(format!(
                "{} labels for {rows} rows of logits",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::usage(format!("label {bad} out of range for {k} classes")));
        }
        let data = self.value(logits).data();
        let mut probs = Vec::with_capacity(rows * k);
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let z = &data[r * k..(r + 1) * k];
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = z.iter().map(|v| (v - m).exp()).sum();
            let log_norm = m + sum_exp.ln();
            total += log_norm - z[label];
            probs.extend(z.iter().map(|v| (v - m).exp() / sum_exp));
        }
        let loss = total / rows as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric("cross-entropy produced a non-finite value".into()));
        }
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.value(loss).is_finite() {
            return Err(Error::Numeric("loss is not finite".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let wants = |v: &Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = self.value(*a).as_matrix_dims().unwrap();
                let n = out.shape()[1];
                if wants(a) {
                    let ga = accumulate(&mut grads[a.0], m * k);
                    // dA = dC · Bᵀ (or dC · B when B was used transposed)
                    gemm(m, n, k, g, false, self.value(*b).data(), !trans_b, ga, true);
                }
                if wants(b) {
                    let gb = accumulate(&mut grads[b.0], k * n);
                    if *trans_b {
                        // dB (n×k) = dCᵀ · A
                        gemm(n, m, k, g, true, self.value(*a).data(), false, gb, true);
                    } else {
                        // dB (k×n) = Aᵀ · dC
                        gemm(k, m, n, self.value(*a).data(), true, g, false, gb, true);
                    }
                }
            }
            Op::Transpose(a) => {
                if wants(a) {
                    let (r, c) = self.value(*a).as_matrix_dims().unwrap();
                    let ga = accumulate(&mut grads[a.0], r * c);
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if wants(v) {
                        let gv = accumulate(&mut grads[v.0], g.len());
                        gv.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::AddRow(a, b) => {
                if wants(a) {
                    let ga = accumulate(&mut grads[a.0], g.len());
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if wants(b) {
                    let cols = self.value(*b).numel();
                    let gb = accumulate(&mut grads[b.0], cols);
                    for chunk in g.chunks(cols) {
                        gb.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    let bv = self.value(*b).data();
                    let ga = accumulate(&mut grads[a.0], g.len());
                    for ((x, gi), bi) in ga.iter_mut().zip(g).zip(bv) {
                        *x += gi * bi;
                    }
                }
                if wants(b) {
                    let av = self.value(*a).data();
                    let gb = accumulate(&mut grads[b.0], g.len());
                    for ((x, gi), ai) in gb.iter_mut().zip(g).zip(av) {
                        *x += gi * ai;
                    }
                }
            }
            Op::Scale(a, factor) => {
                if wants(a) {
                    let ga = accumulate(&mut grads[a.0], g.len());
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y * factor);
                }
            }
            Op::Sigmoid(a) => {
                if wants(a) {
                    let ga = accumulate(&mut grads[a.0], g.len());
                    for ((x, gi), s) in ga.iter_mut().zip(g).zip(out.data()) {
                        *x += gi * s * (1.0 - s);
                    }
                }
            }
            Op::Tanh(a) => {
                if wants(a) {
                    let ga = accumulate(&mut grads[a.0], g.len());
                    for ((x, gi), t) in ga.iter_mut().zip(g).zip(out.data()) {
                        *x += gi * (1.0 - t * t);
                    }
                }
            }
            Op::Sum(a) => {
                if wants(a) {
                    let n = self.value(*a).numel();
                    let ga = accumulate(&mut grads[a.0], n);
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Concat(parts) => {
                let rows = out.as_matrix_dims().unwrap().0;
                let total = *out.shape().last().unwrap();
                let mut offset = 0;
                for p in parts {
                    let w = *self.shape(*p).last().unwrap();
                    if wants(p) {
                        let gp = accumulate(&mut grads[p.0], rows * w);
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            gp[r * w..(r + 1) * w]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols { a, start } => {
                if wants(a) {
                    let (rows, cols) = self.value(*a).as_matrix_dims().unwrap();
                    let len = *out.shape().last().unwrap();
                    let ga = accumulate(&mut grads[a.0], rows * cols);
                    for r in 0..rows {
                        let dst = &mut ga[r * cols + start..r * cols + start + len];
                        dst.iter_mut()
                            .zip(&g[r * len..(r + 1) * len])
                            .for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::SelectRows { a, rows } => {
                if wants(a) {
                    let (n, cols) = self.value(*a).as_matrix_dims().unwrap();
                    let ga = accumulate(&mut grads[a.0], n * cols);
                    for (k, &r) in rows.iter().enumerate() {
                        ga[r * cols..(r + 1) * cols]
                            .iter_mut()
                            .zip(&g[k * cols..(k + 1) * cols])
                            .for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::SegmentSum { a, segments } => {
                if wants(a) {
                    let (n, cols) = self.value(*a).as_matrix_dims().unwrap();
                    let ga = accumulate(&mut grads[a.0], n * cols);
                    for (s, members) in segments.iter().enumerate() {
                        let src = &g[s * cols..(s + 1) * cols];
                        for &r in members {
                            ga[r * cols..(r + 1) * cols]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if wants(a) {
                    let ga = accumulate(&mut grads[a.0], g.len());
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::Max { inputs, argmax } => {
                for (k, v) in inputs.iter().enumerate() {
                    if !wants(v) {
                        continue;
                    }
                    let gv = accumulate(&mut grads[v.0], g.len());
                    for ((x, gi), &am) in gv.iter_mut().zip(g).zip(argmax) {
                        if am == k {
                            *x += gi;
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                if wants(logits) {
                    let k = probs.len() / labels.len();
                    let scale = g[0] / labels.len() as f64;
                    let gl = accumulate(&mut grads[logits.0], probs.len());
                    for (r, &label) in labels.iter().enumerate() {
                        for c in 0..k {
                            let onehot = if c == label { 1.0 } else { 0.0 };
                            gl[r * k + c] += scale * (probs[r * k + c] - onehot);
                        }
                    }
                }
            }
        }
    }
}
