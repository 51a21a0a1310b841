//! Reverse-mode differentiation over an eagerly evaluated op record.
//!
//! Ops append to the record in execution order, so the record is always
//! topologically sorted and the backward pass is a single reverse sweep.

use std::collections::HashMap;

use rand::Rng;
use thiserror::Error;

use super::params::{Gradients, ParamId, ParamSet};
use super::tensor::Tensor;

/// Reference to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    EmbedRow(ParamId, usize),
    MatMul,
    Add,
    Mul,
    Concat,
    StackRows,
    Tanh,
    Sigmoid,
    Softmax,
    Dot,
    ScalarAffine { scale: f64 },
    AddScalar,
    Dropout { mask: Vec<f64> },
    WeightedSum,
    SoftmaxCrossEntropy { gold: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::EmbedRow(..) => "embed-row",
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::Concat => "concat",
            Op::StackRows => "stack-rows",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Softmax => "softmax",
            Op::Dot => "dot",
            Op::ScalarAffine { .. } => "scalar-affine",
            Op::AddScalar => "add-scalar",
            Op::Dropout { .. } => "dropout",
            Op::WeightedSum => "weighted-sum",
            Op::SoftmaxCrossEntropy { .. } => "softmax-cross-entropy",
        }
    }
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
}

/// Single-threaded computation record bound to one parameter set.
pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape { params, nodes: Vec::new(), param_nodes: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> NodeId {
        assert!(
            value.all_finite(),
            "non-finite output in op {:?} with output shape {:?}",
            op.name(),
            value.shape()
        );
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, inputs, value });
        id
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, vec![], value)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> NodeId {
        self.constant(Tensor::zeros(shape))
    }

    /// Leaf node for a trainable parameter; memoized per tape.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let value = self.params.value(id).clone();
        let node = self.push(Op::Param(id), vec![], value);
        self.param_nodes.insert(id, node);
        node
    }

    /// Row lookup into an embedding parameter without materializing the matrix.
    pub fn embed_row(&mut self, table: ParamId, row: usize) -> NodeId {
        let t = self.params.value(table);
        assert!(
            t.rank() == 2 && row < t.rows(),
            "embed-row: row {row} out of bounds for table shape {:?}",
            t.shape()
        );
        let value = Tensor::vector(t.row(row).to_vec());
        self.push(Op::EmbedRow(table, row), vec![], value)
    }

    /// Matrix times vector, or matrix times matrix.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(av.rank() == 2, "matmul: left input must be a matrix, got {:?}", av.shape());
        let value = if bv.is_vector() {
            assert_eq!(av.cols(), bv.len(), "matmul: shape mismatch {:?} x {:?}", av.shape(), bv.shape());
            let mut out = vec![0.0; av.rows()];
            for (i, o) in out.iter_mut().enumerate() {
                *o = dot_slices(av.row(i), bv.data());
            }
            Tensor::vector(out)
        } else {
            assert_eq!(av.cols(), bv.rows(), "matmul: shape mismatch {:?} x {:?}", av.shape(), bv.shape());
            let (r, k, c) = (av.rows(), av.cols(), bv.cols());
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for t in 0..k {
                    let x = av.at(i, t);
                    let brow = bv.row(t);
                    let orow = &mut out[i * c..(i + 1) * c];
                    for (o, b) in orow.iter_mut().zip(brow) {
                        *o += x * b;
                    }
                }
            }
            Tensor::matrix(r, c, out)
        };
        self.push(Op::MatMul, vec![a, b], value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.shape(), bv.shape(), "add: shape mismatch {:?} + {:?}", av.shape(), bv.shape());
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data);
        self.push(Op::Add, vec![a, b], value)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.shape(), bv.shape(), "mul: shape mismatch {:?} * {:?}", av.shape(), bv.shape());
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(av.shape().to_vec(), data);
        self.push(Op::Mul, vec![a, b], value)
    }

    /// Concatenate two vectors.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(
            av.is_vector() && bv.is_vector(),
            "concat: expected vectors, got {:?} and {:?}",
            av.shape(),
            bv.shape()
        );
        let mut data = av.data().to_vec();
        data.extend_from_slice(bv.data());
        let value = Tensor::vector(data);
        self.push(Op::Concat, vec![a, b], value)
    }

    /// Stack equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> NodeId {
        assert!(!rows.is_empty(), "stack-rows: empty input");
        let cols = self.nodes[rows[0].0].value.len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            let v = &self.nodes[r.0].value;
            assert!(
                v.is_vector() && v.len() == cols,
                "stack-rows: row shape mismatch {:?}, expected vector of {cols}",
                v.shape()
            );
            data.extend_from_slice(v.data());
        }
        let value = Tensor::matrix(rows.len(), cols, data);
        self.push(Op::StackRows, rows.to_vec(), value)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let data = self.nodes[x.0].value.data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::new(self.nodes[x.0].value.shape().to_vec(), data);
        self.push(Op::Tanh, vec![x], value)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let data = self.nodes[x.0].value.data().iter().map(|v| sigmoid(*v)).collect();
        let value = Tensor::new(self.nodes[x.0].value.shape().to_vec(), data);
        self.push(Op::Sigmoid, vec![x], value)
    }

    /// Softmax over a vector, computed with max subtraction.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        assert!(xv.is_vector(), "softmax: expected vector, got {:?}", xv.shape());
        let value = Tensor::vector(softmax_slice(xv.data()));
        self.push(Op::Softmax, vec![x], value)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(
            av.is_vector() && bv.is_vector() && av.len() == bv.len(),
            "dot: shape mismatch {:?} . {:?}",
            av.shape(),
            bv.shape()
        );
        let value = Tensor::scalar(dot_slices(av.data(), bv.data()));
        self.push(Op::Dot, vec![a, b], value)
    }

    /// Element-wise `scale * x + shift` with constant coefficients.
    pub fn scalar_affine(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let data = xv.data().iter().map(|v| scale * v + shift).collect();
        let value = Tensor::new(xv.shape().to_vec(), data);
        self.push(Op::ScalarAffine { scale }, vec![x], value)
    }

    /// Broadcast-add a scalar node to every element of a vector.
    pub fn add_scalar(&mut self, v: NodeId, s: NodeId) -> NodeId {
        let sv = &self.nodes[s.0].value;
        assert!(sv.is_scalar(), "add-scalar: second input must be scalar, got {:?}", sv.shape());
        let b = sv.item();
        let vv = &self.nodes[v.0].value;
        let data = vv.data().iter().map(|x| x + b).collect();
        let value = Tensor::new(vv.shape().to_vec(), data);
        self.push(Op::AddScalar, vec![v, s], value)
    }

    /// Inverted dropout. Identity when `train` is false or `rate` is zero.
    pub fn dropout<R: Rng>(&mut self, x: NodeId, rate: f64, train: bool, rng: &mut R) -> NodeId {
        assert!((0.0..1.0).contains(&rate), "dropout: rate must be in [0,1), got {rate}");
        if !train || rate == 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let xv = &self.nodes[x.0].value;
        let mask: Vec<f64> = (0..xv.len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(xv.shape().to_vec(), data);
        self.push(Op::Dropout { mask }, vec![x], value)
    }

    /// `sum_i weights[i] * rows[i]` for a weight vector and a matrix of rows.
    pub fn weighted_sum(&mut self, weights: NodeId, rows: NodeId) -> NodeId {
        let (wv, mv) = (&self.nodes[weights.0].value, &self.nodes[rows.0].value);
        assert!(
            wv.is_vector() && mv.rank() == 2 && wv.len() == mv.rows(),
            "weighted-sum: shape mismatch weights {:?} rows {:?}",
            wv.shape(),
            mv.shape()
        );
        let mut out = vec![0.0; mv.cols()];
        for (i, w) in wv.data().iter().enumerate() {
            for (o, r) in out.iter_mut().zip(mv.row(i)) {
                *o += w * r;
            }
        }
        let value = Tensor::vector(out);
        self.push(Op::WeightedSum, vec![weights, rows], value)
    }

    /// Fused `-log softmax(logits)[gold]`, numerically stable.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, gold: usize) -> NodeId {
        let lv = &self.nodes[logits.0].value;
        assert!(
            lv.is_vector() && gold < lv.len(),
            "softmax-cross-entropy: gold index {gold} out of bounds for {:?}",
            lv.shape()
        );
        let max = lv.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lv.data().iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let value = Tensor::scalar(lse - lv.data()[gold]);
        self.push(Op::SoftmaxCrossEntropy { gold }, vec![logits], value)
    }

    /// Reverse sweep from a scalar loss; returns per-parameter gradients.
    /// Parameters not on any path to the loss get zero gradient.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, AutodiffError> {
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(AutodiffError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads = Gradients::zeros(self.params);
        let mut node_grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        node_grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(gy) = node_grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(pid) => grads.tensors[pid.0].add_assign(&gy),
                Op::EmbedRow(pid, row) => {
                    let table = &mut grads.tensors[pid.0];
                    let c = table.cols();
                    let slice = &mut table.data_mut()[row * c..(row + 1) * c];
                    for (t, g) in slice.iter_mut().zip(gy.data()) {
                        *t += g;
                    }
                }
                Op::MatMul => {
                    let a = &self.nodes[node.inputs[0].0].value;
                    let b = &self.nodes[node.inputs[1].0].value;
                    if b.is_vector() {
                        let mut ga = Tensor::zeros_like(a);
                        let mut gb = Tensor::zeros_like(b);
                        {
                            let cols = a.cols();
                            let gad = ga.data_mut();
                            for (i, gyi) in gy.data().iter().enumerate() {
                                for (j, bj) in b.data().iter().enumerate() {
                                    gad[i * cols + j] += gyi * bj;
                                }
                            }
                        }
                        {
                            let gbd = gb.data_mut();
                            for (i, gyi) in gy.data().iter().enumerate() {
                                for (j, aij) in a.row(i).iter().enumerate() {
                                    gbd[j] += gyi * aij;
                                }
                            }
                        }
                        accumulate(&mut node_grads, node.inputs[0], ga);
                        accumulate(&mut node_grads, node.inputs[1], gb);
                    } else {
                        let (r, k, c) = (a.rows(), a.cols(), b.cols());
                        let mut ga = Tensor::zeros_like(a);
                        let mut gb = Tensor::zeros_like(b);
                        {
                            let gad = ga.data_mut();
                            for i in 0..r {
                                for t in 0..k {
                                    gad[i * k + t] += dot_slices(gy.row(i), b.row(t));
                                }
                            }
                        }
                        {
                            let gbd = gb.data_mut();
                            for i in 0..r {
                                for t in 0..k {
                                    let aij = a.at(i, t);
                                    for (g, gyv) in gbd[t * c..(t + 1) * c].iter_mut().zip(gy.row(i)) {
                                        *g += aij * gyv;
                                    }
                                }
                            }
                        }
                        accumulate(&mut node_grads, node.inputs[0], ga);
                        accumulate(&mut node_grads, node.inputs[1], gb);
                    }
                }
                Op::Add => {
                    accumulate(&mut node_grads, node.inputs[0], gy.clone());
                    accumulate(&mut node_grads, node.inputs[1], gy);
                }
                Op::Mul => {
                    let a = &self.nodes[node.inputs[0].0].value;
                    let b = &self.nodes[node.inputs[1].0].value;
                    let ga = elementwise(&gy, b, |g, v| g * v);
                    let gb = elementwise(&gy, a, |g, v| g * v);
                    accumulate(&mut node_grads, node.inputs[0], ga);
                    accumulate(&mut node_grads, node.inputs[1], gb);
                }
                Op::Concat => {
                    let p = self.nodes[node.inputs[0].0].value.len();
                    let ga = Tensor::vector(gy.data()[..p].to_vec());
                    let gb = Tensor::vector(gy.data()[p..].to_vec());
                    accumulate(&mut node_grads, node.inputs[0], ga);
                    accumulate(&mut node_grads, node.inputs[1], gb);
                }
                Op::StackRows => {
                    for (r, &input) in node.inputs.iter().enumerate() {
                        accumulate(&mut node_grads, input, Tensor::vector(gy.row(r).to_vec()));
                    }
                }
                Op::Tanh => {
                    let gx = elementwise(&gy, &node.value, |g, y| g * (1.0 - y * y));
                    accumulate(&mut node_grads, node.inputs[0], gx);
                }
                Op::Sigmoid => {
                    let gx = elementwise(&gy, &node.value, |g, y| g * y * (1.0 - y));
                    accumulate(&mut node_grads, node.inputs[0], gx);
                }
                Op::Softmax => {
                    let y = node.value.data();
                    let inner = dot_slices(gy.data(), y);
                    let gx = Tensor::vector(
                        y.iter().zip(gy.data()).map(|(yi, gi)| yi * (gi - inner)).collect(),
                    );
                    accumulate(&mut node_grads, node.inputs[0], gx);
                }
                Op::Dot => {
                    let a = &self.nodes[node.inputs[0].0].value;
                    let b = &self.nodes[node.inputs[1].0].value;
                    let s = gy.item();
                    let ga = Tensor::vector(b.data().iter().map(|v| s * v).collect());
                    let gb = Tensor::vector(a.data().iter().map(|v| s * v).collect());
                    accumulate(&mut node_grads, node.inputs[0], ga);
                    accumulate(&mut node_grads, node.inputs[1], gb);
                }
                Op::ScalarAffine { scale } => {
                    let gx = Tensor::new(
                        gy.shape().to_vec(),
                        gy.data().iter().map(|g| scale * g).collect(),
                    );
                    accumulate(&mut node_grads, node.inputs[0], gx);
                }
                Op::AddScalar => {
                    let gs = Tensor::scalar(gy.data().iter().sum());
                    accumulate(&mut node_grads, node.inputs[0], gy);
                    accumulate(&mut node_grads, node.inputs[1], gs);
                }
                Op::Dropout { mask } => {
                    let gx = Tensor::new(
                        gy.shape().to_vec(),
                        gy.data().iter().zip(mask).map(|(g, m)| g * m).collect(),
                    );
                    accumulate(&mut node_grads, node.inputs[0], gx);
                }
                Op::WeightedSum => {
                    let w = &self.nodes[node.inputs[0].0].value;
                    let m = &self.nodes[node.inputs[1].0].value;
                    let gw = Tensor::vector(
                        (0..m.rows()).map(|i| dot_slices(gy.data(), m.row(i))).collect(),
                    );
                    let mut gm = Tensor::zeros_like(m);
                    {
                        let c = m.cols();
                        let gmd = gm.data_mut();
                        for (i, wi) in w.data().iter().enumerate() {
                            for (g, gyv) in gmd[i * c..(i + 1) * c].iter_mut().zip(gy.data()) {
                                *g += wi * gyv;
                            }
                        }
                    }
                    accumulate(&mut node_grads, node.inputs[0], gw);
                    accumulate(&mut node_grads, node.inputs[1], gm);
                }
                Op::SoftmaxCrossEntropy { gold } => {
                    let logits = &self.nodes[node.inputs[0].0].value;
                    let mut p = softmax_slice(logits.data());
                    p[*gold] -= 1.0;
                    let s = gy.item();
                    let gx = Tensor::vector(p.into_iter().map(|v| s * v).collect());
                    accumulate(&mut node_grads, node.inputs[0], gx);
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate(node_grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut node_grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect(),
    )
}

pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
