//! Reverse-mode differentiation over dense real matrices.
//!
//! Every node holds a 2-D array. Rows index items (graph nodes or edges),
//! columns index features. Vectors are stored as `1 × n` rows. Complex
//! quantities never appear on the tape directly: they are carried as separate
//! real and imaginary blocks, and custom ops that work in the complex domain
//! return gradients with respect to those real blocks.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::ops::Range;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Axis};

use super::Real;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// A differentiable operation with a hand-written adjoint.
pub trait TapeOp<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Given the forward inputs, the forward output and the upstream gradient
    /// with respect to the output, returns the gradient for every input (in
    /// input order, each shaped like its input).
    fn backward(&self, inputs: &[&Array2<T>], output: &Array2<T>, upstream: &Array2<T>) -> Vec<Array2<T>>;
}

enum Op<'a, T: Real> {
    Constant,
    Param(usize),
    /// `Σ_b X_b · W[range_b, :]`
    Linear {
        blocks: Vec<(NodeId, Range<usize>)>,
        weight: NodeId,
    },
    AddRow {
        x: NodeId,
        bias: NodeId,
    },
    Add(NodeId, NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Gather {
        x: NodeId,
        index: Vec<usize>,
    },
    SegmentMean {
        x: NodeId,
        segment: Vec<usize>,
        counts: Vec<usize>,
    },
    Scale(NodeId, T),
    Sum(NodeId),
    SumSquares(NodeId),
    Custom {
        inputs: Vec<NodeId>,
        op: Box<dyn TapeOp<T> + 'a>,
    },
}

struct Node<'a, T: Real> {
    value: Cow<'a, Array2<T>>,
    op: Op<'a, T>,
    needs_grad: bool,
}

/// Records one forward computation ending in a scalar.
pub struct GradTape<'a, T: Real> {
    nodes: Vec<Node<'a, T>>,
}

/// Gradients keyed by parameter id. Shapes match the registered parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T: Real> {
    params: BTreeMap<usize, Array2<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, param: usize) -> Option<&Array2<T>> {
        self.params.get(&param)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Array2<T>)> {
        self.params.iter().map(|(&k, v)| (k, v))
    }

    pub fn into_map(self) -> BTreeMap<usize, Array2<T>> {
        self.params
    }

    pub fn norm(&self) -> T {
        self.params
            .values()
            .map(|g| g.iter().map(|&x| x * x).sum::<T>())
            .sum::<T>()
            .sqrt()
    }
}

impl<'a, T: Real> Default for GradTape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Real> GradTape<'a, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Cow<'a, Array2<T>>, op: Op<'a, T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn constant(&mut self, value: Array2<T>) -> NodeId {
        self.push(Cow::Owned(value), Op::Constant, false)
    }

    pub fn constant_ref(&mut self, value: &'a Array2<T>) -> NodeId {
        self.push(Cow::Borrowed(value), Op::Constant, false)
    }

    /// Registers a trainable tensor. Registering the same id twice sums the
    /// two gradient contributions.
    pub fn param(&mut self, id: usize, value: &'a Array2<T>) -> NodeId {
        self.push(Cow::Borrowed(value), Op::Param(id), true)
    }

    pub fn linear(&mut self, blocks: &[(NodeId, Range<usize>)], weight: NodeId) -> NodeId {
        assert!(!blocks.is_empty(), "linear: no input blocks");
        let w = self.value(weight);
        let rows = self.value(blocks[0].0).nrows();
        let mut out = Array2::zeros((rows, w.ncols()));
        for (x, range) in blocks {
            let xv = self.value(*x);
            assert_eq!(xv.nrows(), rows, "linear: blocks disagree on row count");
            assert_eq!(xv.ncols(), range.len(), "linear: block width vs weight slice");
            assert!(range.end <= w.nrows(), "linear: weight slice out of bounds");
            general_mat_mul(T::one(), xv, &w.slice(s![range.clone(), ..]), T::one(), &mut out);
        }
        let needs = self.needs(weight) || blocks.iter().any(|(x, _)| self.needs(*x));
        self.push(
            Cow::Owned(out),
            Op::Linear {
                blocks: blocks.to_vec(),
                weight,
            },
            needs,
        )
    }

    pub fn matmul(&mut self, x: NodeId, weight: NodeId) -> NodeId {
        let cols = self.value(x).ncols();
        self.linear(&[(x, 0..cols)], weight)
    }

    /// Adds a `1 × n` row to every row of `x`.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let b = self.value(bias);
        assert_eq!(b.nrows(), 1, "add_row: bias must be a single row");
        assert_eq!(b.ncols(), self.value(x).ncols(), "add_row: width");
        let out = self.value(x) + b;
        let needs = self.needs(x) || self.needs(bias);
        self.push(Cow::Owned(out), Op::AddRow { x, bias }, needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add: shapes");
        let out = self.value(a) + self.value(b);
        let needs = self.needs(a) || self.needs(b);
        self.push(Cow::Owned(out), Op::Add(a, b), needs)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).mapv(|v| if v > T::zero() { v } else { T::zero() });
        let needs = self.needs(x);
        self.push(Cow::Owned(out), Op::Relu(x), needs)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).mapv(T::tanh);
        let needs = self.needs(x);
        self.push(Cow::Owned(out), Op::Tanh(x), needs)
    }

    /// Row `i` of the output is row `index[i]` of `x`.
    pub fn gather(&mut self, x: NodeId, index: Vec<usize>) -> NodeId {
        let xv = self.value(x);
        let mut out = Array2::zeros((index.len(), xv.ncols()));
        for (i, &src) in index.iter().enumerate() {
            out.row_mut(i).assign(&xv.row(src));
        }
        let needs = self.needs(x);
        self.push(Cow::Owned(out), Op::Gather { x, index }, needs)
    }

    /// Row `s` of the output is the mean of the rows `i` of `x` with
    /// `segment[i] == s`. Empty segments produce zero rows.
    pub fn segment_mean(&mut self, x: NodeId, segment: Vec<usize>, segments: usize) -> NodeId {
        let xv = self.value(x);
        assert_eq!(segment.len(), xv.nrows(), "segment_mean: one segment per row");
        let mut counts = vec![0usize; segments];
        let mut out = Array2::zeros((segments, xv.ncols()));
        for (i, &s) in segment.iter().enumerate() {
            counts[s] += 1;
            let mut row = out.row_mut(s);
            row += &xv.row(i);
        }
        for (s, &n) in counts.iter().enumerate() {
            if n > 0 {
                let inv = T::one() / T::from_usize(n).unwrap();
                out.row_mut(s).mapv_inplace(|v| v * inv);
            }
        }
        let needs = self.needs(x);
        self.push(Cow::Owned(out), Op::SegmentMean { x, segment, counts }, needs)
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> NodeId {
        let out = self.value(x) * factor;
        let needs = self.needs(x);
        self.push(Cow::Owned(out), Op::Scale(x, factor), needs)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total = self.value(x).sum();
        let needs = self.needs(x);
        self.push(Cow::Owned(Array2::from_elem((1, 1), total)), Op::Sum(x), needs)
    }

    pub fn sum_squares(&mut self, x: NodeId) -> NodeId {
        let total = self.value(x).iter().map(|&v| v * v).sum();
        let needs = self.needs(x);
        self.push(Cow::Owned(Array2::from_elem((1, 1), total)), Op::SumSquares(x), needs)
    }

    /// Appends a custom op whose forward value has already been computed.
    pub fn custom(&mut self, inputs: Vec<NodeId>, value: Array2<T>, op: Box<dyn TapeOp<T> + 'a>) -> NodeId {
        let needs = inputs.iter().any(|&i| self.needs(i));
        self.push(Cow::Owned(value), Op::Custom { inputs, op }, needs)
    }

    /// Propagates d(loss)/d(node) from the scalar `loss` node back to every
    /// registered parameter. The tape is left untouched, so repeated calls
    /// return identical gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::Usage("backward called before any forward computation".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage(format!("loss node {} is not on this tape", loss.0)));
        }
        if self.value(loss).dim() != (1, 1) {
            return Err(Error::Usage(format!(
                "loss must be a scalar, got shape {:?}",
                self.value(loss).dim()
            )));
        }

        let mut params: BTreeMap<usize, Array2<T>> = BTreeMap::new();
        for node in &self.nodes {
            if let Op::Param(id) = node.op {
                params.entry(id).or_insert_with(|| Array2::zeros(node.value.dim()));
            }
        }

        let mut grads: Vec<Option<Array2<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    *params.get_mut(id).unwrap() += &g;
                }
                Op::Linear { blocks, weight } => {
                    let w = self.value(*weight);
                    if self.needs(*weight) {
                        let mut gw = Array2::zeros(w.dim());
                        for (x, range) in blocks {
                            let mut slot = gw.slice_mut(s![range.clone(), ..]);
                            general_mat_mul(T::one(), &self.value(*x).t(), &g, T::one(), &mut slot);
                        }
                        accumulate(&mut grads, *weight, gw);
                    }
                    for (x, range) in blocks {
                        if self.needs(*x) {
                            let gx = g.dot(&w.slice(s![range.clone(), ..]).t());
                            accumulate(&mut grads, *x, gx);
                        }
                    }
                }
                Op::AddRow { x, bias } => {
                    if self.needs(*bias) {
                        accumulate(&mut grads, *bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.needs(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Relu(x) => {
                    let mut gx = g;
                    gx.zip_mut_with(&node.value, |gv, &y| {
                        if y <= T::zero() {
                            *gv = T::zero();
                        }
                    });
                    accumulate(&mut grads, *x, gx);
                }
                Op::Tanh(x) => {
                    let mut gx = g;
                    gx.zip_mut_with(&node.value, |gv, &y| *gv *= T::one() - y * y);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Gather { x, index } => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    for (i, &src) in index.iter().enumerate() {
                        let mut row = gx.row_mut(src);
                        row += &g.row(i);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SegmentMean { x, segment, counts } => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    for (i, &s) in segment.iter().enumerate() {
                        let inv = T::one() / T::from_usize(counts[s]).unwrap();
                        gx.row_mut(i).zip_mut_with(&g.row(s), |a, &b| *a = b * inv);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Scale(x, factor) => {
                    accumulate(&mut grads, *x, g * *factor);
                }
                Op::Sum(x) => {
                    let gx = Array2::from_elem(self.value(*x).dim(), g[(0, 0)]);
                    accumulate(&mut grads, *x, gx);
                }
                Op::SumSquares(x) => {
                    let two_g = T::lit(2.0) * g[(0, 0)];
                    accumulate(&mut grads, *x, self.value(*x) * two_g);
                }
                Op::Custom { inputs, op } => {
                    let values: Vec<&Array2<T>> = inputs.iter().map(|&id| self.value(id)).collect();
                    let gin = op.backward(&values, &node.value, &g);
                    assert_eq!(gin.len(), inputs.len(), "{}: one gradient per input", op.name());
                    for (&id, gi) in inputs.iter().zip(gin) {
                        if self.needs(id) {
                            assert_eq!(gi.dim(), self.value(id).dim(), "{}: gradient shape", op.name());
                            accumulate(&mut grads, id, gi);
                        }
                    }
                }
            }
        }
        Ok(Gradients { params })
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Array2<T>>], id: NodeId, g: Array2<T>) {
    match &mut grads[id.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}
