//! Define-by-run tensor graph with reverse-mode differentiation.
//!
//! A [`Graph`] records every primitive application; [`Tensor`] is a cheap
//! handle into it. Values are immutable once created. Calling
//! [`Tensor::backward`] on a scalar walks the tape in reverse and accumulates
//! adjoints additively, so a tensor used along several paths receives the sum
//! of all path gradients. A second `backward` on the same graph without
//! [`Graph::zero_grads`] is an error.
//!
//! Shapes are explicit and strict: no broadcasting beyond scalar-times-tensor
//! ([`Tensor::scale`]) and row-vector-plus-matrix ([`Tensor::add_row`]).
//! Scalars are rank-0 tensors (empty shape, one element). All math is `f64`.

pub mod blob;
pub mod gradcheck;
pub mod kernels;

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::TensorError;

/// Norm floor below which row normalization refuses the input.
pub const MIN_L2_NORM: f64 = 1e-12;

type TResult<T> = Result<T, TensorError>;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRow(usize, usize),
    SoftmaxRows(usize),
    LogSumExpRows(usize),
    Gelu(usize),
    L2NormalizeRows(usize),
    Log(usize),
    ConcatCols(usize, usize),
    GatherRows(usize, Vec<usize>),
    SumAll(usize),
    MeanAll(usize),
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

#[derive(Default)]
struct GraphInner {
    nodes: Vec<Node>,
    backward_done: bool,
}

/// Recording tape for one computation. Cheap to clone (shared handle).
///
/// A graph must not be shared by concurrent writers; the handle is
/// deliberately not `Send`, which makes that a compile-time guarantee.
/// Parallelism happens inside kernels, on raw buffers.
#[derive(Clone, Default)]
pub struct Graph {
    inner: Rc<RefCell<GraphInner>>,
}

/// Handle to one value in a [`Graph`].
#[derive(Clone)]
pub struct Tensor {
    graph: Graph,
    id: usize,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

fn validate_shape(shape: &[usize], len: usize) -> TResult<()> {
    let mut numel: usize = 1;
    for &e in shape {
        if e == 0 {
            return Err(TensorError::InvalidShape {
                shape: shape.to_vec(),
                reason: "extents must be positive",
            });
        }
        numel = numel
            .checked_mul(e)
            .ok_or(TensorError::InvalidShape {
                shape: shape.to_vec(),
                reason: "extent product overflows",
            })?;
    }
    if numel != len {
        return Err(TensorError::InvalidShape {
            shape: shape.to_vec(),
            reason: "extent product does not match data length",
        });
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, op: Op, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            op,
            shape,
            data,
            requires_grad,
            grad: None,
        });
        Tensor {
            graph: self.clone(),
            id: inner.nodes.len() - 1,
        }
    }

    /// New leaf that does not require gradients.
    pub fn constant(&self, data: Vec<f64>, shape: &[usize]) -> TResult<Tensor> {
        validate_shape(shape, data.len())?;
        Ok(self.push(Op::Leaf, shape.to_vec(), data, false))
    }

    /// New leaf that requires gradients.
    pub fn param(&self, data: Vec<f64>, shape: &[usize]) -> TResult<Tensor> {
        validate_shape(shape, data.len())?;
        Ok(self.push(Op::Leaf, shape.to_vec(), data, true))
    }

    /// Rank-0 constant.
    pub fn scalar(&self, v: f64) -> Tensor {
        self.push(Op::Leaf, Vec::new(), vec![v], false)
    }

    /// Clears all gradients and re-arms backward.
    pub fn zero_grads(&self) {
        let mut inner = self.inner.borrow_mut();
        for n in inner.nodes.iter_mut() {
            n.grad = None;
        }
        inner.backward_done = false;
    }

    pub fn num_nodes(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    fn same_as(&self, other: &Graph) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

impl Tensor {
    /// The graph this tensor lives in.
    pub fn graph(&self) -> Graph {
        self.graph.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.inner.borrow().nodes[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.graph.inner.borrow().nodes[self.id].data.len()
    }

    /// Copy of the value, row-major.
    pub fn data(&self) -> Vec<f64> {
        self.graph.inner.borrow().nodes[self.id].data.clone()
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> TResult<f64> {
        let inner = self.graph.inner.borrow();
        let node = &inner.nodes[self.id];
        if node.data.len() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: node.shape.clone(),
            });
        }
        Ok(node.data[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.inner.borrow().nodes[self.id].requires_grad
    }

    /// Gradient accumulated by the last backward, if this tensor required
    /// gradients and was reached from the loss.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.graph.inner.borrow().nodes[self.id].grad.clone()
    }

    /// Same value as a fresh constant leaf: gradients stop here.
    pub fn detach(&self) -> Tensor {
        let (shape, data) = {
            let inner = self.graph.inner.borrow();
            let n = &inner.nodes[self.id];
            (n.shape.clone(), n.data.clone())
        };
        self.graph.push(Op::Leaf, shape, data, false)
    }

    fn dims2(&self, op: &'static str) -> TResult<(usize, usize)> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(TensorError::BadRank {
                op,
                expected: "rank-2",
                got: shape,
            });
        }
        Ok((shape[0], shape[1]))
    }

    fn check_same_graph(&self, other: &Tensor, op: &'static str) -> TResult<()> {
        if !self.graph.same_as(&other.graph) {
            return Err(TensorError::GraphMismatch { op });
        }
        Ok(())
    }

    fn with_data<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.graph.inner.borrow().nodes[self.id].data)
    }

    fn with_data2<R>(&self, other: &Tensor, f: impl FnOnce(&[f64], &[f64]) -> R) -> R {
        let inner = self.graph.inner.borrow();
        f(&inner.nodes[self.id].data, &inner.nodes[other.id].data)
    }

    fn binary_same_shape(
        &self,
        rhs: &Tensor,
        op: &'static str,
        make: impl FnOnce(usize, usize) -> Op,
        apply: impl FnOnce(&[f64], &[f64]) -> Vec<f64>,
    ) -> TResult<Tensor> {
        self.check_same_graph(rhs, op)?;
        let (ls, rs) = (self.shape(), rhs.shape());
        if ls != rs {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: ls,
                rhs: rs,
            });
        }
        let data = self.with_data2(rhs, apply);
        let rg = self.requires_grad() || rhs.requires_grad();
        Ok(self.graph.push(make(self.id, rhs.id), ls, data, rg))
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, rhs: &Tensor) -> TResult<Tensor> {
        self.check_same_graph(rhs, "matmul")?;
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = rhs.dims2("matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let data = self.with_data2(rhs, |a, b| kernels::matmul(a, b, m, k, n));
        let rg = self.requires_grad() || rhs.requires_grad();
        Ok(self
            .graph
            .push(Op::Matmul(self.id, rhs.id), vec![m, n], data, rg))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> TResult<Tensor> {
        let (m, n) = self.dims2("transpose")?;
        let data = self.with_data(|x| kernels::transpose(x, m, n));
        let rg = self.requires_grad();
        Ok(self
            .graph
            .push(Op::Transpose(self.id), vec![n, m], data, rg))
    }

    /// Elementwise sum; shapes must match exactly.
    pub fn add(&self, rhs: &Tensor) -> TResult<Tensor> {
        self.binary_same_shape(rhs, "add", Op::Add, |a, b| {
            a.iter().zip(b).map(|(&x, &y)| x + y).collect()
        })
    }

    /// Elementwise difference; shapes must match exactly.
    pub fn sub(&self, rhs: &Tensor) -> TResult<Tensor> {
        self.binary_same_shape(rhs, "sub", Op::Sub, |a, b| {
            a.iter().zip(b).map(|(&x, &y)| x - y).collect()
        })
    }

    /// Elementwise product; shapes must match exactly.
    pub fn mul(&self, rhs: &Tensor) -> TResult<Tensor> {
        self.binary_same_shape(rhs, "mul", Op::Mul, |a, b| {
            a.iter().zip(b).map(|(&x, &y)| x * y).collect()
        })
    }

    /// Multiplication by a scalar constant.
    pub fn scale(&self, c: f64) -> TResult<Tensor> {
        let shape = self.shape();
        let data = self.with_data(|x| x.iter().map(|&v| c * v).collect());
        let rg = self.requires_grad();
        Ok(self.graph.push(Op::Scale(self.id, c), shape, data, rg))
    }

    /// Adds a 1×N row vector to every row of an M×N matrix.
    pub fn add_row(&self, row: &Tensor) -> TResult<Tensor> {
        self.check_same_graph(row, "add_row")?;
        let (m, n) = self.dims2("add_row")?;
        let (rm, rn) = row.dims2("add_row")?;
        if rm != 1 || rn != n {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: vec![m, n],
                rhs: vec![rm, rn],
            });
        }
        let data = self.with_data2(row, |x, r| {
            let mut out = x.to_vec();
            for chunk in out.chunks_mut(n) {
                for (o, &rv) in chunk.iter_mut().zip(r) {
                    *o += rv;
                }
            }
            out
        });
        let rg = self.requires_grad() || row.requires_grad();
        Ok(self
            .graph
            .push(Op::AddRow(self.id, row.id), vec![m, n], data, rg))
    }

    fn check_finite(&self, op: &'static str) -> TResult<()> {
        let ok = self.with_data(|x| x.iter().all(|v| v.is_finite()));
        if !ok {
            return Err(TensorError::NonFinite { op });
        }
        Ok(())
    }

    /// Row-wise softmax (max-subtracted). Input entries must be finite.
    pub fn softmax_rows(&self) -> TResult<Tensor> {
        let (m, n) = self.dims2("softmax_rows")?;
        self.check_finite("softmax_rows")?;
        let data = self.with_data(|x| kernels::softmax_rows(x, m, n));
        let rg = self.requires_grad();
        Ok(self
            .graph
            .push(Op::SoftmaxRows(self.id), vec![m, n], data, rg))
    }

    /// Row-wise log-sum-exp (max-subtracted), M×N → M×1. Entries must be
    /// finite except that -inf is allowed (an excluded term).
    pub fn logsumexp_rows(&self) -> TResult<Tensor> {
        let (m, n) = self.dims2("logsumexp_rows")?;
        let ok = self.with_data(|x| x.iter().all(|v| !v.is_nan() && *v != f64::INFINITY));
        if !ok {
            return Err(TensorError::NonFinite {
                op: "logsumexp_rows",
            });
        }
        let data = self.with_data(|x| kernels::logsumexp_rows(x, m, n));
        let rg = self.requires_grad();
        Ok(self
            .graph
            .push(Op::LogSumExpRows(self.id), vec![m, 1], data, rg))
    }

    /// Elementwise GeLU, tanh approximation.
    pub fn gelu(&self) -> TResult<Tensor> {
        let shape = self.shape();
        let data = self.with_data(|x| kernels::gelu(x));
        let rg = self.requires_grad();
        Ok(self.graph.push(Op::Gelu(self.id), shape, data, rg))
    }

    /// Row-wise L2 normalization; degenerate rows (norm < 1e-12) are an
    /// error, with no epsilon fudge.
    pub fn l2_normalize_rows(&self) -> TResult<Tensor> {
        let (m, n) = self.dims2("l2_normalize_rows")?;
        let data = self
            .with_data(|x| kernels::l2_normalize_rows(x, m, n, MIN_L2_NORM))
            .map_err(|(row, norm)| TensorError::DegenerateRow {
                row,
                norm,
                min: MIN_L2_NORM,
            })?;
        let rg = self.requires_grad();
        Ok(self
            .graph
            .push(Op::L2NormalizeRows(self.id), vec![m, n], data, rg))
    }

    /// Elementwise natural log; input must be strictly positive.
    pub fn log(&self) -> TResult<Tensor> {
        let ok = self.with_data(|x| x.iter().all(|&v| v > 0.0 && v.is_finite()));
        if !ok {
            return Err(TensorError::NonPositive { op: "log" });
        }
        let shape = self.shape();
        let data = self.with_data(|x| x.iter().map(|&v| v.ln()).collect());
        let rg = self.requires_grad();
        Ok(self.graph.push(Op::Log(self.id), shape, data, rg))
    }

    /// Column-wise concatenation: M×N1 ++ M×N2 → M×(N1+N2).
    pub fn concat_cols(&self, rhs: &Tensor) -> TResult<Tensor> {
        self.check_same_graph(rhs, "concat_cols")?;
        let (m, n1) = self.dims2("concat_cols")?;
        let (m2, n2) = rhs.dims2("concat_cols")?;
        if m != m2 {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                lhs: vec![m, n1],
                rhs: vec![m2, n2],
            });
        }
        let data = self.with_data2(rhs, |a, b| {
            let mut out = Vec::with_capacity(m * (n1 + n2));
            for i in 0..m {
                out.extend_from_slice(&a[i * n1..(i + 1) * n1]);
                out.extend_from_slice(&b[i * n2..(i + 1) * n2]);
            }
            out
        });
        let rg = self.requires_grad() || rhs.requires_grad();
        Ok(self
            .graph
            .push(Op::ConcatCols(self.id, rhs.id), vec![m, n1 + n2], data, rg))
    }

    /// New matrix whose rows are `indices` of this one (duplicates allowed).
    pub fn gather_rows(&self, indices: &[usize]) -> TResult<Tensor> {
        let (m, n) = self.dims2("gather_rows")?;
        if indices.is_empty() {
            return Err(TensorError::InvalidShape {
                shape: vec![0, n],
                reason: "gather_rows needs at least one index",
            });
        }
        for &ix in indices {
            if ix >= m {
                return Err(TensorError::RowOutOfRange {
                    op: "gather_rows",
                    index: ix,
                    rows: m,
                });
            }
        }
        let data = self.with_data(|x| {
            let mut out = Vec::with_capacity(indices.len() * n);
            for &ix in indices {
                out.extend_from_slice(&x[ix * n..(ix + 1) * n]);
            }
            out
        });
        let rg = self.requires_grad();
        Ok(self.graph.push(
            Op::GatherRows(self.id, indices.to_vec()),
            vec![indices.len(), n],
            data,
            rg,
        ))
    }

    /// Sum of all elements, as a rank-0 scalar.
    pub fn sum_all(&self) -> TResult<Tensor> {
        let data = self.with_data(|x| vec![x.iter().sum::<f64>()]);
        let rg = self.requires_grad();
        Ok(self.graph.push(Op::SumAll(self.id), Vec::new(), data, rg))
    }

    /// Mean of all elements, as a rank-0 scalar.
    pub fn mean_all(&self) -> TResult<Tensor> {
        let n = self.numel();
        let data = self.with_data(|x| vec![x.iter().sum::<f64>() / n as f64]);
        let rg = self.requires_grad();
        Ok(self.graph.push(Op::MeanAll(self.id), Vec::new(), data, rg))
    }

    /// Reverse-mode differentiation from this scalar. Populates `grad` for
    /// every gradient-requiring tensor reachable from it; adjoints along
    /// multiple paths accumulate additively.
    pub fn backward(&self) -> TResult<()> {
        let mut inner = self.graph.inner.borrow_mut();
        if inner.backward_done {
            return Err(TensorError::BackwardWithoutReset);
        }
        {
            let node = &inner.nodes[self.id];
            if node.data.len() != 1 {
                return Err(TensorError::NonScalarLoss {
                    shape: node.shape.clone(),
                });
            }
            if !node.data[0].is_finite() {
                return Err(TensorError::NonFinite { op: "backward" });
            }
        }
        inner.backward_done = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; inner.nodes.len()];
        grads[self.id] = Some(vec![1.0]);

        fn acc(slot: &mut Option<Vec<f64>>, contrib: Vec<f64>) {
            match slot {
                Some(g) => {
                    for (gi, ci) in g.iter_mut().zip(contrib) {
                        *gi += ci;
                    }
                }
                None => *slot = Some(contrib),
            }
        }

        for id in (0..=self.id).rev() {
            let Some(gout) = grads[id].take() else {
                continue;
            };
            let op = inner.nodes[id].op.clone();
            let nodes = &inner.nodes;
            let wants = |i: usize| nodes[i].requires_grad;
            match op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let m = nodes[a].shape[0];
                    let k = nodes[a].shape[1];
                    let n = nodes[b].shape[1];
                    if wants(a) {
                        let bt = kernels::transpose(&nodes[b].data, k, n);
                        acc(&mut grads[a], kernels::matmul(&gout, &bt, m, n, k));
                    }
                    if wants(b) {
                        let at = kernels::transpose(&nodes[a].data, m, k);
                        acc(&mut grads[b], kernels::matmul(&at, &gout, k, m, n));
                    }
                }
                Op::Transpose(x) => {
                    if wants(x) {
                        let m = nodes[x].shape[0];
                        let n = nodes[x].shape[1];
                        acc(&mut grads[x], kernels::transpose(&gout, n, m));
                    }
                }
                Op::Add(a, b) => {
                    if wants(a) {
                        acc(&mut grads[a], gout.clone());
                    }
                    if wants(b) {
                        acc(&mut grads[b], gout.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if wants(a) {
                        acc(&mut grads[a], gout.clone());
                    }
                    if wants(b) {
                        acc(&mut grads[b], gout.iter().map(|&v| -v).collect());
                    }
                }
                Op::Mul(a, b) => {
                    if wants(a) {
                        let c = gout
                            .iter()
                            .zip(&nodes[b].data)
                            .map(|(&g, &v)| g * v)
                            .collect();
                        acc(&mut grads[a], c);
                    }
                    if wants(b) {
                        let c = gout
                            .iter()
                            .zip(&nodes[a].data)
                            .map(|(&g, &v)| g * v)
                            .collect();
                        acc(&mut grads[b], c);
                    }
                }
                Op::Scale(x, c) => {
                    if wants(x) {
                        acc(&mut grads[x], gout.iter().map(|&g| c * g).collect());
                    }
                }
                Op::AddRow(x, r) => {
                    let n = nodes[r].shape[1];
                    if wants(x) {
                        acc(&mut grads[x], gout.clone());
                    }
                    if wants(r) {
                        let mut rg = vec![0.0; n];
                        for chunk in gout.chunks(n) {
                            for (o, &g) in rg.iter_mut().zip(chunk) {
                                *o += g;
                            }
                        }
                        acc(&mut grads[r], rg);
                    }
                }
                Op::SoftmaxRows(x) => {
                    if wants(x) {
                        let m = nodes[id].shape[0];
                        let n = nodes[id].shape[1];
                        acc(
                            &mut grads[x],
                            kernels::softmax_rows_backward(&nodes[id].data, &gout, m, n),
                        );
                    }
                }
                Op::LogSumExpRows(x) => {
                    if wants(x) {
                        let m = nodes[x].shape[0];
                        let n = nodes[x].shape[1];
                        acc(
                            &mut grads[x],
                            kernels::logsumexp_rows_backward(
                                &nodes[x].data,
                                &nodes[id].data,
                                &gout,
                                m,
                                n,
                            ),
                        );
                    }
                }
                Op::Gelu(x) => {
                    if wants(x) {
                        acc(&mut grads[x], kernels::gelu_backward(&nodes[x].data, &gout));
                    }
                }
                Op::L2NormalizeRows(x) => {
                    if wants(x) {
                        let m = nodes[x].shape[0];
                        let n = nodes[x].shape[1];
                        acc(
                            &mut grads[x],
                            kernels::l2_normalize_rows_backward(
                                &nodes[x].data,
                                &nodes[id].data,
                                &gout,
                                m,
                                n,
                            ),
                        );
                    }
                }
                Op::Log(x) => {
                    if wants(x) {
                        let c = gout
                            .iter()
                            .zip(&nodes[x].data)
                            .map(|(&g, &v)| g / v)
                            .collect();
                        acc(&mut grads[x], c);
                    }
                }
                Op::ConcatCols(a, b) => {
                    let m = nodes[id].shape[0];
                    let n1 = nodes[a].shape[1];
                    let n2 = nodes[b].shape[1];
                    let w = n1 + n2;
                    if wants(a) {
                        let mut ga = vec![0.0; m * n1];
                        for i in 0..m {
                            ga[i * n1..(i + 1) * n1].copy_from_slice(&gout[i * w..i * w + n1]);
                        }
                        acc(&mut grads[a], ga);
                    }
                    if wants(b) {
                        let mut gb = vec![0.0; m * n2];
                        for i in 0..m {
                            gb[i * n2..(i + 1) * n2]
                                .copy_from_slice(&gout[i * w + n1..(i + 1) * w]);
                        }
                        acc(&mut grads[b], gb);
                    }
                }
                Op::GatherRows(x, ref indices) => {
                    if wants(x) {
                        let n = nodes[x].shape[1];
                        let mut gx = vec![0.0; nodes[x].data.len()];
                        for (row, &ix) in indices.iter().enumerate() {
                            for j in 0..n {
                                gx[ix * n + j] += gout[row * n + j];
                            }
                        }
                        acc(&mut grads[x], gx);
                    }
                }
                Op::SumAll(x) => {
                    if wants(x) {
                        acc(&mut grads[x], vec![gout[0]; nodes[x].data.len()]);
                    }
                }
                Op::MeanAll(x) => {
                    if wants(x) {
                        let len = nodes[x].data.len();
                        acc(&mut grads[x], vec![gout[0] / len as f64; len]);
                    }
                }
            }
            let node = &mut inner.nodes[id];
            if node.requires_grad {
                node.grad = Some(gout);
            }
        }
        Ok(())
    }
}

/// A named, graph-independent parameter value. Models own `Param`s and
/// register them into a fresh graph each step.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub data: Vec<f64>,
    pub shape: Vec<usize>,
}

impl Param {
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Param { data, shape }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Param {
            data: vec![0.0; n],
            shape: shape.to_vec(),
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Registers this value into `g`, trainable or frozen.
    pub fn register(&self, g: &Graph, trainable: bool) -> TResult<Tensor> {
        if trainable {
            g.param(self.data.clone(), &self.shape)
        } else {
            g.constant(self.data.clone(), &self.shape)
        }
    }
}
