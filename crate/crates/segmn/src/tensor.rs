//! Tape-based reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] owns every value produced during one forward pass; a
//! [`Tensor`] is a copyable handle into it. Calling [`Tape::backward`] on a
//! scalar loss walks the recorded primitives once in reverse and accumulates
//! gradients for every tensor created with `requires_grad`.
//!
//! A tape and its tensors belong to a single logical execution. Independent
//! tapes (one per graph pair) can run on separate threads; parameters are
//! shared into tapes as `Arc<Matrix>` and never mutated by a forward pass.

use std::cell::RefCell;
use std::sync::Arc;

use thiserror::Error;

use crate::matrix::Matrix;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TensorError {
    #[error("backward requires a scalar loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("backward already ran on this tape; build a fresh tape per pass")]
    BackwardConsumed,
    #[error("inference tape records no operations, so it cannot run backward")]
    InferenceTape,
}

/// Boolean validity mask congruent to a matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), rows * cols, "mask data length mismatch");
        Mask { rows, cols, data }
    }

    /// All-true mask.
    pub fn all(rows: usize, cols: usize) -> Self {
        Mask { rows, cols, data: vec![true; rows * cols] }
    }

    /// True on the top-left `valid_rows` x `valid_cols` block.
    pub fn block(rows: usize, cols: usize, valid_rows: usize, valid_cols: usize) -> Self {
        assert!(valid_rows <= rows && valid_cols <= cols, "valid block exceeds mask shape");
        let mut data = vec![false; rows * cols];
        for i in 0..valid_rows {
            for j in 0..valid_cols {
                data[i * cols + j] = true;
            }
        }
        Mask { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.cols + j]
    }
}

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tensor {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Tensor {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Scale(usize, f64),
    Hadamard(usize, usize),
    MulScalar(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    ConcatCols(usize, usize),
    Transpose(usize),
    Reshape(usize),
    PadTo(usize),
    Slice { input: usize, r0: usize, c0: usize },
    GatherRows { input: usize, idx: Vec<usize> },
    ScatterRows { input: usize, idx: Vec<usize> },
    RowSoftmax { input: usize, mask: Option<Mask> },
    Tanh(usize),
    Relu(usize),
    Sigmoid(usize),
    Sum(usize),
    MeanRows(usize),
    MaxPool2 { input: usize, argmax: Vec<usize> },
    Mse(usize, usize),
}

struct Node {
    value: Arc<Matrix>,
    op: Op,
    requires_grad: bool,
    name: Option<String>,
}

struct TapeInner {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
    consumed: bool,
}

/// Records a forward pass and replays it in reverse for gradients.
pub struct Tape {
    inner: RefCell<TapeInner>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(TapeInner { nodes: Vec::new(), grads: Vec::new(), consumed: false }),
            recording: true,
        }
    }

    /// Forward-only tape: values are computed but no backward records are
    /// kept, which roughly halves evaluation cost.
    pub fn inference() -> Self {
        Tape {
            inner: RefCell::new(TapeInner { nodes: Vec::new(), grads: Vec::new(), consumed: false }),
            recording: false,
        }
    }

    fn push(&self, value: Matrix, op: Op, requires_grad: bool) -> Tensor {
        self.push_arc(Arc::new(value), op, requires_grad)
    }

    fn push_arc(&self, value: Arc<Matrix>, op: Op, requires_grad: bool) -> Tensor {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        let (rows, cols) = value.shape();
        let (op, requires_grad) = if self.recording {
            (op, requires_grad)
        } else {
            (Op::Leaf, false)
        };
        inner.nodes.push(Node { value, op, requires_grad, name: None });
        inner.grads.push(None);
        Tensor { id, rows, cols }
    }

    pub fn constant(&self, value: Matrix) -> Tensor {
        self.push(value, Op::Leaf, false)
    }

    pub fn constant_arc(&self, value: Arc<Matrix>) -> Tensor {
        self.push_arc(value, Op::Leaf, false)
    }

    pub fn scalar(&self, v: f64) -> Tensor {
        self.constant(Matrix::scalar(v))
    }

    /// Leaf tensor that accumulates a gradient during backward.
    pub fn param(&self, value: Arc<Matrix>) -> Tensor {
        self.push_arc(value, Op::Leaf, true)
    }

    /// Named leaf parameter; its gradient shows up in [`Tape::named_grads`].
    pub fn param_named(&self, name: &str, value: Arc<Matrix>) -> Tensor {
        let t = self.push_arc(value, Op::Leaf, true);
        self.inner.borrow_mut().nodes[t.id].name = Some(name.to_string());
        t
    }

    /// Gradients of all named parameters after a backward pass.
    pub fn named_grads(&self) -> std::collections::BTreeMap<String, Matrix> {
        let inner = self.inner.borrow();
        let mut out = std::collections::BTreeMap::new();
        for (node, grad) in inner.nodes.iter().zip(&inner.grads) {
            if let (Some(name), Some(g)) = (&node.name, grad) {
                out.insert(name.clone(), g.clone());
            }
        }
        out
    }

    pub fn value(&self, t: Tensor) -> Arc<Matrix> {
        Arc::clone(&self.inner.borrow().nodes[t.id].value)
    }

    /// Gradient of the last backward pass, if this tensor required one.
    pub fn grad(&self, t: Tensor) -> Option<Matrix> {
        self.inner.borrow().grads[t.id].clone()
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let inner = self.inner.borrow();
        ids.iter().any(|&id| inner.nodes[id].requires_grad)
    }

    // ---- primitives ------------------------------------------------------

    pub fn matmul(&self, a: Tensor, b: Tensor) -> Tensor {
        let out = self.value(a).matmul(&self.value(b));
        self.push(out, Op::MatMul(a.id, b.id), self.requires(&[a.id, b.id]))
    }

    pub fn add(&self, a: Tensor, b: Tensor) -> Tensor {
        let out = self.value(a).add(&self.value(b));
        self.push(out, Op::Add(a.id, b.id), self.requires(&[a.id, b.id]))
    }

    pub fn sub(&self, a: Tensor, b: Tensor) -> Tensor {
        let out = self.value(a).sub(&self.value(b));
        self.push(out, Op::Sub(a.id, b.id), self.requires(&[a.id, b.id]))
    }

    pub fn scale(&self, a: Tensor, k: f64) -> Tensor {
        let out = self.value(a).scale(k);
        self.push(out, Op::Scale(a.id, k), self.requires(&[a.id]))
    }

    pub fn hadamard(&self, a: Tensor, b: Tensor) -> Tensor {
        let out = self.value(a).zip_map(&self.value(b), |x, y| x * y);
        self.push(out, Op::Hadamard(a.id, b.id), self.requires(&[a.id, b.id]))
    }

    /// Multiplies every entry of `a` by the single entry of scalar tensor `s`.
    pub fn mul_scalar(&self, a: Tensor, s: Tensor) -> Tensor {
        assert_eq!(s.shape(), (1, 1), "mul_scalar needs a 1x1 scalar, got {:?}", s.shape());
        let sv = self.value(s)[(0, 0)];
        let out = self.value(a).scale(sv);
        self.push(out, Op::MulScalar(a.id, s.id), self.requires(&[a.id, s.id]))
    }

    /// Adds a 1 x cols row vector to every row of `a`.
    pub fn add_row(&self, a: Tensor, b: Tensor) -> Tensor {
        assert_eq!(
            (1, a.cols),
            b.shape(),
            "add_row: bias must be 1x{}, got {:?}",
            a.cols,
            b.shape()
        );
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = Matrix::zeros(a.rows, a.cols);
        for i in 0..a.rows {
            for j in 0..a.cols {
                out[(i, j)] = av[(i, j)] + bv[(0, j)];
            }
        }
        self.push(out, Op::AddRow(a.id, b.id), self.requires(&[a.id, b.id]))
    }

    /// Multiplies every row of `a` elementwise by a 1 x cols gate vector.
    pub fn mul_row(&self, a: Tensor, g: Tensor) -> Tensor {
        assert_eq!(
            (1, a.cols),
            g.shape(),
            "mul_row: gate must be 1x{}, got {:?}",
            a.cols,
            g.shape()
        );
        let av = self.value(a);
        let gv = self.value(g);
        let mut out = Matrix::zeros(a.rows, a.cols);
        for i in 0..a.rows {
            for j in 0..a.cols {
                out[(i, j)] = av[(i, j)] * gv[(0, j)];
            }
        }
        self.push(out, Op::MulRow(a.id, g.id), self.requires(&[a.id, g.id]))
    }

    pub fn concat_cols(&self, a: Tensor, b: Tensor) -> Tensor {
        assert_eq!(
            a.rows, b.rows,
            "concat_cols: row mismatch {}x{} vs {}x{}",
            a.rows, a.cols, b.rows, b.cols
        );
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = Matrix::zeros(a.rows, a.cols + b.cols);
        for i in 0..a.rows {
            for j in 0..a.cols {
                out[(i, j)] = av[(i, j)];
            }
            for j in 0..b.cols {
                out[(i, a.cols + j)] = bv[(i, j)];
            }
        }
        self.push(out, Op::ConcatCols(a.id, b.id), self.requires(&[a.id, b.id]))
    }

    pub fn transpose(&self, a: Tensor) -> Tensor {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a.id), self.requires(&[a.id]))
    }

    pub fn reshape(&self, a: Tensor, rows: usize, cols: usize) -> Tensor {
        assert_eq!(
            a.rows * a.cols,
            rows * cols,
            "reshape: {}x{} has {} elements, target {}x{} has {}",
            a.rows,
            a.cols,
            a.rows * a.cols,
            rows,
            cols,
            rows * cols
        );
        let out = Matrix::from_vec(rows, cols, self.value(a).data().to_vec());
        self.push(out, Op::Reshape(a.id), self.requires(&[a.id]))
    }

    /// Embeds `a` in the top-left corner of a zero rows x cols matrix.
    pub fn pad_to(&self, a: Tensor, rows: usize, cols: usize) -> Tensor {
        assert!(
            rows >= a.rows && cols >= a.cols,
            "pad_to: cannot pad {}x{} down to {}x{}",
            a.rows,
            a.cols,
            rows,
            cols
        );
        let av = self.value(a);
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..a.rows {
            for j in 0..a.cols {
                out[(i, j)] = av[(i, j)];
            }
        }
        self.push(out, Op::PadTo(a.id), self.requires(&[a.id]))
    }

    /// Copies the block starting at (r0, c0) with the given extent.
    pub fn slice(&self, a: Tensor, r0: usize, c0: usize, rows: usize, cols: usize) -> Tensor {
        assert!(
            r0 + rows <= a.rows && c0 + cols <= a.cols,
            "slice: block ({r0},{c0})+{rows}x{cols} exceeds {}x{}",
            a.rows,
            a.cols
        );
        let av = self.value(a);
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                out[(i, j)] = av[(r0 + i, c0 + j)];
            }
        }
        self.push(out, Op::Slice { input: a.id, r0, c0 }, self.requires(&[a.id]))
    }

    /// Picks rows of `a` in the order given by `idx`.
    pub fn gather_rows(&self, a: Tensor, idx: Vec<usize>) -> Tensor {
        assert!(
            idx.iter().all(|&i| i < a.rows),
            "gather_rows: index out of range for {} rows",
            a.rows
        );
        let av = self.value(a);
        let mut out = Matrix::zeros(idx.len(), a.cols);
        for (k, &i) in idx.iter().enumerate() {
            for j in 0..a.cols {
                out[(k, j)] = av[(i, j)];
            }
        }
        self.push(out, Op::GatherRows { input: a.id, idx }, self.requires(&[a.id]))
    }

    /// Writes row k of `a` into row `idx[k]` of a zero matrix with
    /// `total_rows` rows. Indices must be distinct.
    pub fn scatter_rows(&self, a: Tensor, idx: Vec<usize>, total_rows: usize) -> Tensor {
        assert_eq!(idx.len(), a.rows, "scatter_rows: {} indices for {} rows", idx.len(), a.rows);
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), idx.len(), "scatter_rows: duplicate target rows");
        assert!(
            idx.iter().all(|&i| i < total_rows),
            "scatter_rows: index out of range for {total_rows} rows"
        );
        let av = self.value(a);
        let mut out = Matrix::zeros(total_rows, a.cols);
        for (k, &i) in idx.iter().enumerate() {
            for j in 0..a.cols {
                out[(i, j)] = av[(k, j)];
            }
        }
        self.push(out, Op::ScatterRows { input: a.id, idx }, self.requires(&[a.id]))
    }

    /// Row-wise softmax. With a mask, only valid entries participate;
    /// masked entries are exactly 0 in both the value and the gradient, and
    /// rows with no valid entry are all zero.
    pub fn row_softmax_masked(&self, a: Tensor, mask: Option<&Mask>) -> Tensor {
        if let Some(m) = mask {
            assert_eq!(
                (m.rows(), m.cols()),
                a.shape(),
                "row_softmax_masked: mask {}x{} vs input {}x{}",
                m.rows(),
                m.cols(),
                a.rows,
                a.cols
            );
        }
        let av = self.value(a);
        let mut out = Matrix::zeros(a.rows, a.cols);
        for i in 0..a.rows {
            let valid: Vec<usize> =
                (0..a.cols).filter(|&j| mask.is_none_or(|m| m.get(i, j))).collect();
            if valid.is_empty() {
                continue;
            }
            let mx = valid.iter().map(|&j| av[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for &j in &valid {
                let e = (av[(i, j)] - mx).exp();
                out[(i, j)] = e;
                z += e;
            }
            for &j in &valid {
                out[(i, j)] /= z;
            }
        }
        self.push(
            out,
            Op::RowSoftmax { input: a.id, mask: mask.cloned() },
            self.requires(&[a.id]),
        )
    }

    pub fn row_softmax(&self, a: Tensor) -> Tensor {
        self.row_softmax_masked(a, None)
    }

    pub fn tanh(&self, a: Tensor) -> Tensor {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a.id), self.requires(&[a.id]))
    }

    pub fn relu(&self, a: Tensor) -> Tensor {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a.id), self.requires(&[a.id]))
    }

    pub fn sigmoid(&self, a: Tensor) -> Tensor {
        let out = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(out, Op::Sigmoid(a.id), self.requires(&[a.id]))
    }

    /// Sum of all entries as a 1x1 tensor.
    pub fn sum(&self, a: Tensor) -> Tensor {
        let out = Matrix::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a.id), self.requires(&[a.id]))
    }

    /// Column means: a 1 x cols tensor.
    pub fn mean_rows(&self, a: Tensor) -> Tensor {
        assert!(a.rows > 0, "mean_rows on an empty matrix");
        let av = self.value(a);
        let mut out = Matrix::zeros(1, a.cols);
        for j in 0..a.cols {
            let mut s = 0.0;
            for i in 0..a.rows {
                s += av[(i, j)];
            }
            out[(0, j)] = s / a.rows as f64;
        }
        self.push(out, Op::MeanRows(a.id), self.requires(&[a.id]))
    }

    /// 2x2 max pooling with stride 2; ragged edges pool whatever cells
    /// exist, so the output is ceil(rows/2) x ceil(cols/2).
    pub fn max_pool2(&self, a: Tensor) -> Tensor {
        assert!(a.rows > 0 && a.cols > 0, "max_pool2 on an empty matrix");
        let av = self.value(a);
        let (or, oc) = (a.rows.div_ceil(2), a.cols.div_ceil(2));
        let mut out = Matrix::zeros(or, oc);
        let mut argmax = vec![0usize; or * oc];
        for bi in 0..or {
            for bj in 0..oc {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for i in (bi * 2)..((bi * 2 + 2).min(a.rows)) {
                    for j in (bj * 2)..((bj * 2 + 2).min(a.cols)) {
                        let v = av[(i, j)];
                        if v > best {
                            best = v;
                            best_idx = i * a.cols + j;
                        }
                    }
                }
                out[(bi, bj)] = best;
                argmax[bi * oc + bj] = best_idx;
            }
        }
        self.push(out, Op::MaxPool2 { input: a.id, argmax }, self.requires(&[a.id]))
    }

    /// Mean squared error between congruent matrices, as a 1x1 tensor.
    pub fn mse(&self, a: Tensor, b: Tensor) -> Tensor {
        assert_eq!(
            a.shape(),
            b.shape(),
            "mse shape mismatch: {}x{} vs {}x{}",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        );
        let av = self.value(a);
        let bv = self.value(b);
        let n = (a.rows * a.cols) as f64;
        let s: f64 = av.data().iter().zip(bv.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        self.push(Matrix::scalar(s / n), Op::Mse(a.id, b.id), self.requires(&[a.id, b.id]))
    }

    /// Sorts a column vector into descending order (a row permutation
    /// chosen from the current values; gradients follow the permutation).
    pub fn sort_desc(&self, a: Tensor) -> Tensor {
        assert_eq!(a.cols, 1, "sort_desc expects a column vector, got {:?}", a.shape());
        let av = self.value(a);
        let mut idx: Vec<usize> = (0..a.rows).collect();
        idx.sort_by(|&i, &j| av[(j, 0)].total_cmp(&av[(i, 0)]).then(i.cmp(&j)));
        self.gather_rows(a, idx)
    }

    // ---- backward --------------------------------------------------------

    /// Populates gradients of every `requires_grad` tensor reachable from
    /// the scalar `loss`. A tape supports exactly one backward pass.
    pub fn backward(&self, loss: Tensor) -> Result<(), TensorError> {
        if !self.recording {
            return Err(TensorError::InferenceTape);
        }
        if loss.shape() != (1, 1) {
            return Err(TensorError::NonScalarLoss { rows: loss.rows, cols: loss.cols });
        }
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(TensorError::BackwardConsumed);
        }
        inner.consumed = true;
        inner.grads[loss.id] = Some(Matrix::scalar(1.0));

        for id in (0..=loss.id).rev() {
            if !inner.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = inner.grads[id].take() else { continue };
            self.propagate(&mut inner, id, &g);
            // Reinstalled so leaves (and intermediates, for tests) stay readable.
            inner.grads[id] = Some(g);
        }
        Ok(())
    }

    fn propagate(&self, inner: &mut TapeInner, id: usize, g: &Matrix) {
        let val = |inner: &TapeInner, i: usize| Arc::clone(&inner.nodes[i].value);
        let add_grad = |inner: &mut TapeInner, i: usize, delta: Matrix| {
            if !inner.nodes[i].requires_grad {
                return;
            }
            match &mut inner.grads[i] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };

        // Ops are matched by moving the record out temporarily to appease the
        // borrow checker; records are immutable so this is a plain read.
        let op = std::mem::replace(&mut inner.nodes[id].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = val(inner, *a);
                let bv = val(inner, *b);
                add_grad(inner, *a, g.matmul(&bv.transpose()));
                add_grad(inner, *b, av.transpose().matmul(g));
            }
            Op::Add(a, b) => {
                add_grad(inner, *a, g.clone());
                add_grad(inner, *b, g.clone());
            }
            Op::Sub(a, b) => {
                add_grad(inner, *a, g.clone());
                add_grad(inner, *b, g.scale(-1.0));
            }
            Op::Scale(a, k) => {
                add_grad(inner, *a, g.scale(*k));
            }
            Op::Hadamard(a, b) => {
                let av = val(inner, *a);
                let bv = val(inner, *b);
                add_grad(inner, *a, g.zip_map(&bv, |x, y| x * y));
                add_grad(inner, *b, g.zip_map(&av, |x, y| x * y));
            }
            Op::MulScalar(a, s) => {
                let av = val(inner, *a);
                let sv = val(inner, *s)[(0, 0)];
                add_grad(inner, *a, g.scale(sv));
                let ds: f64 = g.data().iter().zip(av.data()).map(|(x, y)| x * y).sum();
                add_grad(inner, *s, Matrix::scalar(ds));
            }
            Op::AddRow(a, b) => {
                add_grad(inner, *a, g.clone());
                let mut db = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for j in 0..g.cols() {
                        db[(0, j)] += g[(i, j)];
                    }
                }
                add_grad(inner, *b, db);
            }
            Op::MulRow(a, gate) => {
                let av = val(inner, *a);
                let gv = val(inner, *gate);
                let mut da = Matrix::zeros(g.rows(), g.cols());
                let mut dg = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for j in 0..g.cols() {
                        da[(i, j)] = g[(i, j)] * gv[(0, j)];
                        dg[(0, j)] += g[(i, j)] * av[(i, j)];
                    }
                }
                add_grad(inner, *a, da);
                add_grad(inner, *gate, dg);
            }
            Op::ConcatCols(a, b) => {
                let ac = inner.nodes[*a].value.cols();
                let bc = inner.nodes[*b].value.cols();
                let mut da = Matrix::zeros(g.rows(), ac);
                let mut db = Matrix::zeros(g.rows(), bc);
                for i in 0..g.rows() {
                    for j in 0..ac {
                        da[(i, j)] = g[(i, j)];
                    }
                    for j in 0..bc {
                        db[(i, j)] = g[(i, ac + j)];
                    }
                }
                add_grad(inner, *a, da);
                add_grad(inner, *b, db);
            }
            Op::Transpose(a) => {
                add_grad(inner, *a, g.transpose());
            }
            Op::Reshape(a) => {
                let (r, c) = inner.nodes[*a].value.shape();
                add_grad(inner, *a, Matrix::from_vec(r, c, g.data().to_vec()));
            }
            Op::PadTo(a) => {
                let (r, c) = inner.nodes[*a].value.shape();
                let mut da = Matrix::zeros(r, c);
                for i in 0..r {
                    for j in 0..c {
                        da[(i, j)] = g[(i, j)];
                    }
                }
                add_grad(inner, *a, da);
            }
            Op::Slice { input, r0, c0 } => {
                let (r, c) = inner.nodes[*input].value.shape();
                let mut da = Matrix::zeros(r, c);
                for i in 0..g.rows() {
                    for j in 0..g.cols() {
                        da[(r0 + i, c0 + j)] = g[(i, j)];
                    }
                }
                add_grad(inner, *input, da);
            }
            Op::GatherRows { input, idx } => {
                let (r, c) = inner.nodes[*input].value.shape();
                let mut da = Matrix::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        da[(i, j)] += g[(k, j)];
                    }
                }
                add_grad(inner, *input, da);
            }
            Op::ScatterRows { input, idx } => {
                let (r, c) = inner.nodes[*input].value.shape();
                let mut da = Matrix::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        da[(k, j)] = g[(i, j)];
                    }
                }
                add_grad(inner, *input, da);
            }
            Op::RowSoftmax { input, mask } => {
                let y = Arc::clone(&inner.nodes[id].value);
                let mut da = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let valid: Vec<usize> = (0..y.cols())
                        .filter(|&j| mask.as_ref().is_none_or(|m| m.get(i, j)))
                        .collect();
                    if valid.is_empty() {
                        continue;
                    }
                    let dot: f64 = valid.iter().map(|&j| g[(i, j)] * y[(i, j)]).sum();
                    for &j in &valid {
                        da[(i, j)] = y[(i, j)] * (g[(i, j)] - dot);
                    }
                }
                add_grad(inner, *input, da);
            }
            Op::Tanh(a) => {
                let y = Arc::clone(&inner.nodes[id].value);
                add_grad(inner, *a, g.zip_map(&y, |gi, yi| gi * (1.0 - yi * yi)));
            }
            Op::Relu(a) => {
                let x = val(inner, *a);
                add_grad(inner, *a, g.zip_map(&x, |gi, xi| if xi > 0.0 { gi } else { 0.0 }));
            }
            Op::Sigmoid(a) => {
                let y = Arc::clone(&inner.nodes[id].value);
                add_grad(inner, *a, g.zip_map(&y, |gi, yi| gi * yi * (1.0 - yi)));
            }
            Op::Sum(a) => {
                let (r, c) = inner.nodes[*a].value.shape();
                add_grad(inner, *a, Matrix::ones(r, c).scale(g[(0, 0)]));
            }
            Op::MeanRows(a) => {
                let (r, c) = inner.nodes[*a].value.shape();
                let mut da = Matrix::zeros(r, c);
                for i in 0..r {
                    for j in 0..c {
                        da[(i, j)] = g[(0, j)] / r as f64;
                    }
                }
                add_grad(inner, *a, da);
            }
            Op::MaxPool2 { input, argmax } => {
                let (r, c) = inner.nodes[*input].value.shape();
                let mut da = Matrix::zeros(r, c);
                for (k, &flat) in argmax.iter().enumerate() {
                    da.data_mut()[flat] += g.data()[k];
                }
                add_grad(inner, *input, da);
            }
            Op::Mse(a, b) => {
                let av = val(inner, *a);
                let bv = val(inner, *b);
                let n = (av.rows() * av.cols()) as f64;
                let s = g[(0, 0)] * 2.0 / n;
                add_grad(inner, *a, av.zip_map(&bv, |x, y| s * (x - y)));
                add_grad(inner, *b, av.zip_map(&bv, |x, y| -s * (x - y)));
            }
        }
        inner.nodes[id].op = op;
    }
}
