use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Probabilities are clamped into `[EPS, 1 - EPS]` before any logarithm.
pub const PROB_EPS: f64 = 1e-12;

pub type NodeId = usize;

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Parameter,
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Concat {
        parts: Vec<NodeId>,
    },
    Tanh {
        x: NodeId,
    },
    Sigmoid {
        x: NodeId,
    },
    MaskedSoftmax {
        x: NodeId,
        mask: Vec<bool>,
    },
    Embedding {
        table: NodeId,
        indices: Vec<usize>,
    },
    Dropout {
        x: NodeId,
        keep_scale: Vec<f64>,
    },
    BinaryCrossEntropy {
        p: NodeId,
        targets: Vec<f64>,
        weights: Vec<f64>,
    },
    CategoricalCrossEntropy {
        p: NodeId,
        targets: Vec<usize>,
        weights: Vec<f64>,
    },
    GradReverse {
        x: NodeId,
        lambda: f64,
    },
    Sum {
        x: NodeId,
    },
    ScalarMul {
        x: NodeId,
        factor: f64,
    },
    SliceCols {
        x: NodeId,
        start: usize,
    },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Eagerly evaluated computation graph.
///
/// Every op computes its output when it is added, so the node list is its
/// own topological order. [`Graph::backward`] walks it in reverse.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every parameter node.
#[derive(Clone, Debug)]
pub struct Gradients {
    entries: Vec<(NodeId, Tensor)>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| *n == id).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Tensor)> {
        self.entries.iter().map(|(n, t)| (*n, t))
    }

    /// Gradients in the order of `ids`.
    pub fn collect(&self, ids: &[NodeId]) -> Vec<Tensor> {
        ids.iter()
            .map(|&id| self.get(id).cloned().expect("parameter node"))
            .collect()
    }
}

fn shape_str(t: &Tensor) -> String {
    format!("{:?}", t.shape())
}

/// `c (+)= op(a) * op(b)` where `op` optionally transposes.
/// `a` is logically `[m, k]`, `b` is `[k, n]`, `c` is `[m, n]`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices hold exactly the element counts implied by the
    // dimensions and strides above, as asserted.
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

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        self.nodes.len() - 1
    }

    fn check(&self, op: &'static str, id: NodeId) -> Result<&Tensor> {
        self.nodes
            .get(id)
            .map(|n| &n.value)
            .ok_or_else(|| Error::shape(op, format!("unknown node {id}")))
    }

    fn grad_flag(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value, false)
    }

    /// Trainable leaf; [`Graph::backward`] reports a gradient for it.
    pub fn parameter(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Parameter, value, true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.check("matmul", a)?, self.check("matmul", b)?);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(Error::shape(
                "matmul",
                format!("{} x {}", shape_str(ta), shape_str(tb)),
            ));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, false);
        let value = Tensor::matrix(m, n, out)?;
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push(Op::MatMul { a, b }, value, rg))
    }

    /// Elementwise sum. `b` may also be a single row broadcast over the rows of `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.check("add", a)?, self.check("add", b)?);
        let value = if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
            Tensor::new(ta.shape().to_vec(), data)?
        } else if tb.rows() == 1 && tb.cols() == ta.cols() {
            let c = ta.cols();
            let data = ta
                .data()
                .iter()
                .enumerate()
                .map(|(i, x)| x + tb.data()[i % c])
                .collect();
            Tensor::new(ta.shape().to_vec(), data)?
        } else {
            return Err(Error::shape(
                "add",
                format!("{} + {}", shape_str(ta), shape_str(tb)),
            ));
        };
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push(Op::Add { a, b }, value, rg))
    }

    /// Elementwise product. `b` may also be a single column broadcast over the columns of `a`.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.check("mul", a)?, self.check("mul", b)?);
        let value = if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
            Tensor::new(ta.shape().to_vec(), data)?
        } else if tb.cols() == 1 && tb.rows() == ta.rows() {
            let c = ta.cols();
            let data = ta
                .data()
                .iter()
                .enumerate()
                .map(|(i, x)| x * tb.data()[i / c])
                .collect();
            Tensor::new(ta.shape().to_vec(), data)?
        } else {
            return Err(Error::shape(
                "mul",
                format!("{} * {}", shape_str(ta), shape_str(tb)),
            ));
        };
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push(Op::Mul { a, b }, value, rg))
    }

    /// Concatenates 2-D tensors with equal row counts along the last axis.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let rows = self.check("concat", parts[0])?.rows();
        let mut total = 0;
        for &p in parts {
            let t = self.check("concat", p)?;
            if t.rows() != rows {
                let shapes: Vec<_> = parts.iter().map(|&q| shape_str(&self.nodes[q].value)).collect();
                return Err(Error::shape("concat", format!("row counts differ: {}", shapes.join(", "))));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.nodes[p].value.row(r));
            }
        }
        let value = Tensor::matrix(rows, total, data)?;
        let rg = self.grad_flag(parts);
        Ok(self.push(
            Op::Concat {
                parts: parts.to_vec(),
            },
            value,
            rg,
        ))
    }

    fn unary(&mut self, x: NodeId, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<NodeId> {
        let t = self.check(name, x)?;
        let data = t.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(op, value, rg))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Tanh { x }, "tanh", f64::tanh)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Sigmoid { x }, "sigmoid", sigmoid)
    }

    /// Forward identity; backward scales the incoming gradient by `-lambda`.
    pub fn grad_reverse(&mut self, x: NodeId, lambda: f64) -> Result<NodeId> {
        self.unary(x, Op::GradReverse { x, lambda }, "grad_reverse", |v| v)
    }

    pub fn scalar_mul(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        self.unary(x, Op::ScalarMul { x, factor }, "scalar_mul", |v| v * factor)
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.check("sum", x)?.data().iter().sum();
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(Op::Sum { x }, Tensor::scalar(s), rg))
    }

    /// Columns `start..start + len` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let t = self.check("slice_cols", x)?;
        if len == 0 || start + len > t.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("columns {start}..{} of {}", start + len, shape_str(t)),
            ));
        }
        let rows = t.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let value = Tensor::matrix(rows, len, data)?;
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(Op::SliceCols { x, start }, value, rg))
    }

    /// Softmax along the last axis over positions where `mask` is set.
    /// Masked positions come out as exactly zero.
    pub fn masked_softmax(&mut self, x: NodeId, mask: &[bool]) -> Result<NodeId> {
        let t = self.check("masked_softmax", x)?;
        if mask.len() != t.len() {
            return Err(Error::shape(
                "masked_softmax",
                format!("mask of {} for input {}", mask.len(), shape_str(t)),
            ));
        }
        let (rows, cols) = (t.rows(), t.cols());
        let mut out = vec![0.0; t.len()];
        for r in 0..rows {
            let xs = t.row(r);
            let ms = &mask[r * cols..(r + 1) * cols];
            let max = xs
                .iter()
                .zip(ms)
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::shape(
                    "masked_softmax",
                    format!("row {r} has no valid position"),
                ));
            }
            let o = &mut out[r * cols..(r + 1) * cols];
            let mut z = 0.0;
            for c in 0..cols {
                if ms[c] {
                    o[c] = (xs[c] - max).exp();
                    z += o[c];
                }
            }
            for v in o.iter_mut() {
                *v /= z;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(
            Op::MaskedSoftmax {
                x,
                mask: mask.to_vec(),
            },
            value,
            rg,
        ))
    }

    /// Plain softmax along the last axis.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.check("softmax", x)?.len();
        self.masked_softmax(x, &vec![true; n])
    }

    /// Gathers rows of a `[vocab, dim]` table.
    pub fn embedding_lookup(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let t = self.check("embedding_lookup", table)?;
        if t.shape().len() != 2 {
            return Err(Error::shape("embedding_lookup", format!("table {}", shape_str(t))));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::shape(
                "embedding_lookup",
                format!("index {bad} out of range for table {}", shape_str(t)),
            ));
        }
        if indices.is_empty() {
            return Err(Error::shape("embedding_lookup", "no indices"));
        }
        let dim = t.cols();
        let mut data = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::matrix(indices.len(), dim, data)?;
        let rg = self.nodes[table].requires_grad;
        Ok(self.push(
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            value,
            rg,
        ))
    }

    /// Inverted dropout: zeroes each entry with probability `p` and scales
    /// survivors by `1 / (1 - p)`. Only call this in training mode.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: NodeId, p: f64, rng: &mut R) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::shape("dropout", format!("probability {p} outside [0, 1)")));
        }
        let t = self.check("dropout", x)?;
        let scale = 1.0 / (1.0 - p);
        let keep_scale: Vec<f64> = (0..t.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { scale })
            .collect();
        let data = t.data().iter().zip(&keep_scale).map(|(v, k)| v * k).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(Op::Dropout { x, keep_scale }, value, rg))
    }

    /// Weighted sum over entries of `-(y ln p + (1 - y) ln(1 - p))`.
    pub fn binary_cross_entropy(&mut self, p: NodeId, targets: &[f64], weights: &[f64]) -> Result<NodeId> {
        let t = self.check("binary_cross_entropy", p)?;
        if targets.len() != t.len() || weights.len() != t.len() {
            return Err(Error::shape(
                "binary_cross_entropy",
                format!(
                    "{} targets / {} weights for predictions {}",
                    targets.len(),
                    weights.len(),
                    shape_str(t)
                ),
            ));
        }
        let loss = t
            .data()
            .iter()
            .zip(targets)
            .zip(weights)
            .map(|((&p, &y), &w)| {
                let p = clamp_prob(p);
                -w * (y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        let rg = self.nodes[p].requires_grad;
        Ok(self.push(
            Op::BinaryCrossEntropy {
                p,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            Tensor::scalar(loss),
            rg,
        ))
    }

    /// Weighted sum over rows of `-ln p[row, target[row]]`.
    pub fn categorical_cross_entropy(&mut self, p: NodeId, targets: &[usize], weights: &[f64]) -> Result<NodeId> {
        let t = self.check("categorical_cross_entropy", p)?;
        let (rows, cols) = (t.rows(), t.cols());
        if targets.len() != rows || weights.len() != rows || targets.iter().any(|&k| k >= cols) {
            return Err(Error::shape(
                "categorical_cross_entropy",
                format!(
                    "{} targets / {} weights for probabilities {}",
                    targets.len(),
                    weights.len(),
                    shape_str(t)
                ),
            ));
        }
        let loss = targets
            .iter()
            .zip(weights)
            .enumerate()
            .map(|(r, (&k, &w))| -w * clamp_prob(t.at(r, k)).ln())
            .sum();
        let rg = self.nodes[p].requires_grad;
        Ok(self.push(
            Op::CategoricalCrossEntropy {
                p,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            Tensor::scalar(loss),
            rg,
        ))
    }

    /// Reverse-mode sweep from a scalar `loss` node.
    ///
    /// Returns a gradient for every parameter node in the graph, zero for
    /// parameters the loss does not depend on.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let node = self
            .nodes
            .get(loss)
            .ok_or_else(|| Error::invalid(format!("backward: node {loss} has not been computed")))?;
        if !node.value.is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {}", shape_str(&node.value)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss + 1];
        grads[loss] = Some(vec![1.0]);

        for id in (0..=loss).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let y = &node.value;
            match &node.op {
                Op::Constant => {}
                Op::Parameter => {
                    grads[id] = Some(g);
                }
                Op::MatMul { a, b } => {
                    let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    if self.nodes[*a].requires_grad {
                        let ga = grad_slot(&mut grads, *a, m * k);
                        gemm(m, n, k, &g, false, tb.data(), true, ga, true);
                    }
                    if self.nodes[*b].requires_grad {
                        let gb = grad_slot(&mut grads, *b, k * n);
                        gemm(k, m, n, ta.data(), true, &g, false, gb, true);
                    }
                }
                Op::Add { a, b } => {
                    if self.nodes[*a].requires_grad {
                        let ga = grad_slot(&mut grads, *a, g.len());
                        ga.iter_mut().zip(&g).for_each(|(s, v)| *s += v);
                    }
                    if self.nodes[*b].requires_grad {
                        let nb = self.nodes[*b].value.len();
                        let gb = grad_slot(&mut grads, *b, nb);
                        for (i, v) in g.iter().enumerate() {
                            gb[i % nb] += v;
                        }
                    }
                }
                Op::Mul { a, b } => {
                    let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let broadcast = ta.shape() != tb.shape();
                    let c = ta.cols();
                    let bidx = |i: usize| if broadcast { i / c } else { i };
                    if self.nodes[*a].requires_grad {
                        let ga = grad_slot(&mut grads, *a, g.len());
                        for (i, v) in g.iter().enumerate() {
                            ga[i] += v * tb.data()[bidx(i)];
                        }
                    }
                    if self.nodes[*b].requires_grad {
                        let gb = grad_slot(&mut grads, *b, tb.len());
                        for (i, v) in g.iter().enumerate() {
                            gb[bidx(i)] += v * ta.data()[i];
                        }
                    }
                }
                Op::Concat { parts } => {
                    let rows = y.rows();
                    let total = y.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.cols();
                        if self.nodes[p].requires_grad {
                            let gp = grad_slot(&mut grads, p, rows * w);
                            for r in 0..rows {
                                let src = &g[r * total + offset..r * total + offset + w];
                                gp[r * w..(r + 1) * w]
                                    .iter_mut()
                                    .zip(src)
                                    .for_each(|(s, v)| *s += v);
                            }
                        }
                        offset += w;
                    }
                }
                Op::Tanh { x } => {
                    let gx = grad_slot(&mut grads, *x, g.len());
                    for ((s, v), yv) in gx.iter_mut().zip(&g).zip(y.data()) {
                        *s += v * (1.0 - yv * yv);
                    }
                }
                Op::Sigmoid { x } => {
                    let gx = grad_slot(&mut grads, *x, g.len());
                    for ((s, v), yv) in gx.iter_mut().zip(&g).zip(y.data()) {
                        *s += v * yv * (1.0 - yv);
                    }
                }
                Op::MaskedSoftmax { x, mask } => {
                    let cols = y.cols();
                    let gx = grad_slot(&mut grads, *x, g.len());
                    for r in 0..y.rows() {
                        let ys = y.row(r);
                        let gs = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            if mask[r * cols + c] {
                                gx[r * cols + c] += ys[c] * (gs[c] - dot);
                            }
                        }
                    }
                }
                Op::Embedding { table, indices } => {
                    let dim = y.cols();
                    let n = self.nodes[*table].value.len();
                    let gt = grad_slot(&mut grads, *table, n);
                    for (r, &i) in indices.iter().enumerate() {
                        gt[i * dim..(i + 1) * dim]
                            .iter_mut()
                            .zip(&g[r * dim..(r + 1) * dim])
                            .for_each(|(s, v)| *s += v);
                    }
                }
                Op::Dropout { x, keep_scale } => {
                    let gx = grad_slot(&mut grads, *x, g.len());
                    for ((s, v), k) in gx.iter_mut().zip(&g).zip(keep_scale) {
                        *s += v * k;
                    }
                }
                Op::BinaryCrossEntropy { p, targets, weights } => {
                    let tp = &self.nodes[*p].value;
                    let gp = grad_slot(&mut grads, *p, tp.len());
                    for (i, &pv) in tp.data().iter().enumerate() {
                        let pc = clamp_prob(pv);
                        let (yv, w) = (targets[i], weights[i]);
                        gp[i] += g[0] * w * (-yv / pc + (1.0 - yv) / (1.0 - pc));
                    }
                }
                Op::CategoricalCrossEntropy { p, targets, weights } => {
                    let tp = &self.nodes[*p].value;
                    let cols = tp.cols();
                    let gp = grad_slot(&mut grads, *p, tp.len());
                    for (r, (&k, &w)) in targets.iter().zip(weights).enumerate() {
                        gp[r * cols + k] -= g[0] * w / clamp_prob(tp.at(r, k));
                    }
                }
                Op::GradReverse { x, lambda } => {
                    let gx = grad_slot(&mut grads, *x, g.len());
                    gx.iter_mut().zip(&g).for_each(|(s, v)| *s -= lambda * v);
                }
                Op::Sum { x } => {
                    let n = self.nodes[*x].value.len();
                    let gx = grad_slot(&mut grads, *x, n);
                    gx.iter_mut().for_each(|s| *s += g[0]);
                }
                Op::ScalarMul { x, factor } => {
                    let gx = grad_slot(&mut grads, *x, g.len());
                    gx.iter_mut().zip(&g).for_each(|(s, v)| *s += factor * v);
                }
                Op::SliceCols { x, start } => {
                    let tx = &self.nodes[*x].value;
                    let (cols, w) = (tx.cols(), y.cols());
                    let gx = grad_slot(&mut grads, *x, tx.len());
                    for r in 0..y.rows() {
                        gx[r * cols + start..r * cols + start + w]
                            .iter_mut()
                            .zip(&g[r * w..(r + 1) * w])
                            .for_each(|(s, v)| *s += v);
                    }
                }
            }
        }

        let entries = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Parameter))
            .map(|(id, n)| {
                let data = grads
                    .get_mut(id)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; n.value.len()]);
                let t = Tensor::new(n.value.shape().to_vec(), data).expect("gradient matches parameter shape");
                (id, t)
            })
            .collect();
        Ok(Gradients { entries })
    }
}

fn grad_slot(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut [f64] {
    grads[id].get_or_insert_with(|| vec![0.0; len])
}
