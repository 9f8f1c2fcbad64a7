//! Reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation whose inputs include at least one
//! tracked [`TapeMatrix`]. Operations on constants are evaluated eagerly and
//! leave the tape untouched, so an inference pass over constant parameters
//! records nothing. [`Tape::backward`] may run once per recording; call
//! [`Tape::reset`] before the next step.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub type NodeId = usize;

/// A matrix value with an optional handle on a [`Tape`].
#[derive(Clone, Debug)]
pub struct TapeMatrix {
    value: Arc<Matrix>,
    node: Option<NodeId>,
}

impl TapeMatrix {
    pub fn constant(value: Matrix) -> Self {
        TapeMatrix {
            value: Arc::new(value),
            node: None,
        }
    }

    pub fn constant_shared(value: Arc<Matrix>) -> Self {
        TapeMatrix { value, node: None }
    }

    #[inline]
    pub fn value(&self) -> &Matrix {
        &self.value
    }

    pub fn shared_value(&self) -> Arc<Matrix> {
        Arc::clone(&self.value)
    }

    #[inline]
    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    #[inline]
    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.value.rows()
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.value.cols()
    }

    /// Same value, cut from the tape. Nothing flows back through the result.
    pub fn detach(&self) -> TapeMatrix {
        TapeMatrix {
            value: Arc::clone(&self.value),
            node: None,
        }
    }

    pub fn into_value(self) -> Matrix {
        Arc::try_unwrap(self.value).unwrap_or_else(|shared| (*shared).clone())
    }
}

/// Free-function form of [`TapeMatrix::detach`].
pub fn detach(x: &TapeMatrix) -> TapeMatrix {
    x.detach()
}

/// Constant-weight sparse aggregation: `out[dst[e]] += weight[e] * x[src[e]]`.
#[derive(Clone, Debug, Default)]
pub struct SparseAggregation {
    pub n_in: usize,
    pub n_out: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub weight: Vec<f64>,
}

impl SparseAggregation {
    fn apply(&self, x: &Matrix) -> Matrix {
        let d = x.cols();
        let mut out = Matrix::zeros(self.n_out, d);
        for ((&s, &t), &w) in self.src.iter().zip(&self.dst).zip(&self.weight) {
            if w == 0.0 {
                continue;
            }
            let (xs, o) = (x.row(s), out.row_mut(t));
            for (o, &v) in o.iter_mut().zip(xs) {
                *o += w * v;
            }
        }
        out
    }

    fn apply_transpose(&self, g: &Matrix) -> Matrix {
        let d = g.cols();
        let mut out = Matrix::zeros(self.n_in, d);
        for ((&s, &t), &w) in self.src.iter().zip(&self.dst).zip(&self.weight) {
            if w == 0.0 {
                continue;
            }
            let (gt, o) = (g.row(t), out.row_mut(s));
            for (o, &v) in o.iter_mut().zip(gt) {
                *o += w * v;
            }
        }
        out
    }
}

/// Node and shape of an input whose value the backward pass never reads, so
/// the op does not keep it alive.
#[derive(Clone, Copy, Debug)]
struct Slot {
    node: Option<NodeId>,
    rows: usize,
    cols: usize,
}

impl Slot {
    fn of(x: &TapeMatrix) -> Self {
        Slot {
            node: x.node,
            rows: x.rows(),
            cols: x.cols(),
        }
    }

    fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(TapeMatrix, TapeMatrix),
    Add(Slot, Slot),
    Sub(Slot, Slot),
    Mul(TapeMatrix, TapeMatrix),
    Scale(Slot, f64),
    Shift(Slot),
    Sigmoid(Slot, Arc<Matrix>),
    Tanh(Slot, Arc<Matrix>),
    /// Keeps the output; its positive entries are those of the input.
    Relu(Slot, Arc<Matrix>),
    LeakyRelu(TapeMatrix, f64),
    Softplus(TapeMatrix),
    AddRow(Slot, Slot),
    MulCol(TapeMatrix, TapeMatrix),
    StackRows(Slot, Slot),
    SliceRows(Slot, usize),
    SliceCols(Slot, usize),
    Sum(Slot),
    SumCols(Slot),
    GatherRows(Slot, Arc<Vec<usize>>),
    ScatterAddRows(Slot, Arc<Vec<usize>>),
    Spmm(Slot, Arc<SparseAggregation>),
    SegmentSoftmax(Slot, Arc<Vec<usize>>, Arc<Matrix>),
}

#[derive(Debug)]
struct Node {
    shape: (usize, usize),
    op: Op,
}

/// Gradients of a scalar loss with respect to every leaf on the tape.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient for a tracked leaf. `None` for constants, detached values and
    /// leaves the loss does not depend on.
    pub fn wrt(&self, x: &TapeMatrix) -> Option<&Matrix> {
        x.node
            .and_then(|id| self.grads.get(id).and_then(Option::as_ref))
    }

    pub fn take(&mut self, x: &TapeMatrix) -> Option<Matrix> {
        x.node
            .and_then(|id| self.grads.get_mut(id).and_then(Option::take))
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn check_same(op: &'static str, a: &TapeMatrix, b: &TapeMatrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn check_index(op: &'static str, idx: &[usize], bound: usize) -> Result<()> {
    if let Some(&bad) = idx.iter().find(|&&i| i >= bound) {
        return Err(Error::Bounds {
            op,
            detail: format!("index {bad} >= {bound}"),
        });
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    /// Registers a trainable leaf.
    pub fn leaf(&mut self, value: Arc<Matrix>) -> TapeMatrix {
        let id = self.nodes.len();
        self.nodes.push(Node {
            shape: value.shape(),
            op: Op::Leaf,
        });
        TapeMatrix {
            value,
            node: Some(id),
        }
    }

    pub fn variable(&mut self, value: Matrix) -> TapeMatrix {
        self.leaf(Arc::new(value))
    }

    fn record(&mut self, value: Matrix, tracked: bool, op: impl FnOnce() -> Op) -> TapeMatrix {
        if !tracked {
            return TapeMatrix::constant(value);
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            shape: value.shape(),
            op: op(),
        });
        TapeMatrix {
            value: Arc::new(value),
            node: Some(id),
        }
    }

    pub fn matmul(&mut self, a: &TapeMatrix, b: &TapeMatrix) -> Result<TapeMatrix> {
        let out = a.value().matmul(b.value())?;
        let tracked = a.is_tracked() || b.is_tracked();
        Ok(self.record(out, tracked, || Op::MatMul(a.clone(), b.clone())))
    }

    pub fn add(&mut self, a: &TapeMatrix, b: &TapeMatrix) -> Result<TapeMatrix> {
        check_same("add", a, b)?;
        let out = a.value().zip_map(b.value(), |x, y| x + y);
        let tracked = a.is_tracked() || b.is_tracked();
        Ok(self.record(out, tracked, || Op::Add(Slot::of(a), Slot::of(b))))
    }

    pub fn sub(&mut self, a: &TapeMatrix, b: &TapeMatrix) -> Result<TapeMatrix> {
        check_same("sub", a, b)?;
        let out = a.value().zip_map(b.value(), |x, y| x - y);
        let tracked = a.is_tracked() || b.is_tracked();
        Ok(self.record(out, tracked, || Op::Sub(Slot::of(a), Slot::of(b))))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: &TapeMatrix, b: &TapeMatrix) -> Result<TapeMatrix> {
        check_same("mul", a, b)?;
        let out = a.value().zip_map(b.value(), |x, y| x * y);
        let tracked = a.is_tracked() || b.is_tracked();
        Ok(self.record(out, tracked, || Op::Mul(a.clone(), b.clone())))
    }

    pub fn scale(&mut self, a: &TapeMatrix, s: f64) -> TapeMatrix {
        let out = a.value().map(|x| x * s);
        self.record(out, a.is_tracked(), || Op::Scale(Slot::of(a), s))
    }

    /// Adds a scalar to every entry.
    pub fn shift(&mut self, a: &TapeMatrix, s: f64) -> TapeMatrix {
        let out = a.value().map(|x| x + s);
        self.record(out, a.is_tracked(), || Op::Shift(Slot::of(a)))
    }

    pub fn sigmoid(&mut self, a: &TapeMatrix) -> TapeMatrix {
        let out = a.value().map(sigmoid);
        if !a.is_tracked() {
            return TapeMatrix::constant(out);
        }
        let out = Arc::new(out);
        let saved = Arc::clone(&out);
        self.push_shared(out, Op::Sigmoid(Slot::of(a), saved))
    }

    pub fn tanh(&mut self, a: &TapeMatrix) -> TapeMatrix {
        let out = a.value().map(f64::tanh);
        if !a.is_tracked() {
            return TapeMatrix::constant(out);
        }
        let out = Arc::new(out);
        let saved = Arc::clone(&out);
        self.push_shared(out, Op::Tanh(Slot::of(a), saved))
    }

    pub fn relu(&mut self, a: &TapeMatrix) -> TapeMatrix {
        let out = a.value().map(|x| x.max(0.0));
        if !a.is_tracked() {
            return TapeMatrix::constant(out);
        }
        let out = Arc::new(out);
        let saved = Arc::clone(&out);
        self.push_shared(out, Op::Relu(Slot::of(a), saved))
    }

    pub fn leaky_relu(&mut self, a: &TapeMatrix, slope: f64) -> TapeMatrix {
        let out = a.value().map(|x| if x > 0.0 { x } else { slope * x });
        self.record(out, a.is_tracked(), || Op::LeakyRelu(a.clone(), slope))
    }

    /// `log(1 + exp(x))`, evaluated without overflow.
    pub fn softplus(&mut self, a: &TapeMatrix) -> TapeMatrix {
        let out = a.value().map(softplus);
        self.record(out, a.is_tracked(), || Op::Softplus(a.clone()))
    }

    /// Adds a `[1 x c]` row to every row of `a`.
    pub fn add_row(&mut self, a: &TapeMatrix, row: &TapeMatrix) -> Result<TapeMatrix> {
        if row.rows() != 1 || row.cols() != a.cols() {
            return Err(Error::shape("add_row", a.shape(), row.shape()));
        }
        let mut out = a.value().clone();
        let r = row.value().as_slice();
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(r) {
                *o += b;
            }
        }
        let tracked = a.is_tracked() || row.is_tracked();
        Ok(self.record(out, tracked, || Op::AddRow(Slot::of(a), Slot::of(row))))
    }

    /// Scales row `i` of `a` by `col[i]`, with `col` of shape `[r x 1]`.
    pub fn mul_col(&mut self, a: &TapeMatrix, col: &TapeMatrix) -> Result<TapeMatrix> {
        if col.cols() != 1 || col.rows() != a.rows() {
            return Err(Error::shape("mul_col", a.shape(), col.shape()));
        }
        let mut out = a.value().clone();
        for i in 0..out.rows() {
            let s = col.value().get(i, 0);
            for o in out.row_mut(i) {
                *o *= s;
            }
        }
        let tracked = a.is_tracked() || col.is_tracked();
        Ok(self.record(out, tracked, || Op::MulCol(a.clone(), col.clone())))
    }

    /// Vertical concatenation `[top; bottom]`.
    pub fn stack_rows(&mut self, top: &TapeMatrix, bottom: &TapeMatrix) -> Result<TapeMatrix> {
        if top.cols() != bottom.cols() {
            return Err(Error::shape("stack_rows", top.shape(), bottom.shape()));
        }
        let mut data = Vec::with_capacity(top.value().len() + bottom.value().len());
        data.extend_from_slice(top.value().as_slice());
        data.extend_from_slice(bottom.value().as_slice());
        let out = Matrix::from_vec(top.rows() + bottom.rows(), top.cols(), data)?;
        let tracked = top.is_tracked() || bottom.is_tracked();
        Ok(self.record(out, tracked, || {
            Op::StackRows(Slot::of(top), Slot::of(bottom))
        }))
    }

    /// Rows `lo..hi`.
    pub fn slice_rows(&mut self, x: &TapeMatrix, lo: usize, hi: usize) -> Result<TapeMatrix> {
        if lo >= hi || hi > x.rows() {
            return Err(Error::Bounds {
                op: "slice_rows",
                detail: format!("[{lo}, {hi}) of {} rows", x.rows()),
            });
        }
        let c = x.cols();
        let out = Matrix::from_vec(hi - lo, c, x.value().as_slice()[lo * c..hi * c].to_vec())?;
        Ok(self.record(out, x.is_tracked(), || Op::SliceRows(Slot::of(x), lo)))
    }

    /// Columns `lo..hi`.
    pub fn slice_cols(&mut self, x: &TapeMatrix, lo: usize, hi: usize) -> Result<TapeMatrix> {
        if lo >= hi || hi > x.cols() {
            return Err(Error::Bounds {
                op: "slice_cols",
                detail: format!("[{lo}, {hi}) of {} cols", x.cols()),
            });
        }
        let mut out = Matrix::zeros(x.rows(), hi - lo);
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&x.value().row(r)[lo..hi]);
        }
        Ok(self.record(out, x.is_tracked(), || Op::SliceCols(Slot::of(x), lo)))
    }

    /// Sum of all entries as a `[1 x 1]` matrix.
    pub fn sum(&mut self, x: &TapeMatrix) -> TapeMatrix {
        let out = Matrix::scalar(x.value().sum());
        self.record(out, x.is_tracked(), || Op::Sum(Slot::of(x)))
    }

    pub fn mean(&mut self, x: &TapeMatrix) -> TapeMatrix {
        let n = x.value().len().max(1) as f64;
        let s = self.sum(x);
        self.scale(&s, 1.0 / n)
    }

    /// Row sums, `[r x c] -> [r x 1]`.
    pub fn sum_cols(&mut self, x: &TapeMatrix) -> TapeMatrix {
        let v = x.value();
        let out = Matrix::column(
            &(0..v.rows())
                .map(|r| v.row(r).iter().sum())
                .collect::<Vec<_>>(),
        );
        self.record(out, x.is_tracked(), || Op::SumCols(Slot::of(x)))
    }

    /// `out[i] = x[idx[i]]`.
    pub fn gather_rows(&mut self, x: &TapeMatrix, idx: Arc<Vec<usize>>) -> Result<TapeMatrix> {
        check_index("gather_rows", &idx, x.rows())?;
        let mut out = Matrix::zeros(idx.len(), x.cols());
        for (i, &j) in idx.iter().enumerate() {
            out.row_mut(i).copy_from_slice(x.value().row(j));
        }
        Ok(self.record(out, x.is_tracked(), || Op::GatherRows(Slot::of(x), idx)))
    }

    /// `out[idx[i]] += x[i]` with `n` output rows.
    pub fn scatter_add_rows(
        &mut self,
        x: &TapeMatrix,
        idx: Arc<Vec<usize>>,
        n: usize,
    ) -> Result<TapeMatrix> {
        if idx.len() != x.rows() {
            return Err(Error::shape("scatter_add_rows", x.shape(), (idx.len(), 1)));
        }
        check_index("scatter_add_rows", &idx, n)?;
        let mut out = Matrix::zeros(n, x.cols());
        for (i, &j) in idx.iter().enumerate() {
            let src = x.value().row(i);
            for (o, &v) in out.row_mut(j).iter_mut().zip(src) {
                *o += v;
            }
        }
        Ok(self.record(out, x.is_tracked(), || Op::ScatterAddRows(Slot::of(x), idx)))
    }

    /// Constant-weight sparse aggregation of the rows of `x`.
    pub fn spmm(&mut self, x: &TapeMatrix, agg: Arc<SparseAggregation>) -> Result<TapeMatrix> {
        if x.rows() != agg.n_in {
            return Err(Error::shape("spmm", x.shape(), (agg.n_in, x.cols())));
        }
        check_index("spmm", &agg.src, agg.n_in)?;
        check_index("spmm", &agg.dst, agg.n_out)?;
        let out = agg.apply(x.value());
        Ok(self.record(out, x.is_tracked(), || Op::Spmm(Slot::of(x), agg)))
    }

    /// Softmax of a `[e x 1]` column within groups sharing a segment id.
    pub fn segment_softmax(
        &mut self,
        x: &TapeMatrix,
        segments: Arc<Vec<usize>>,
        n_segments: usize,
    ) -> Result<TapeMatrix> {
        if x.cols() != 1 || x.rows() != segments.len() {
            return Err(Error::shape(
                "segment_softmax",
                x.shape(),
                (segments.len(), 1),
            ));
        }
        check_index("segment_softmax", &segments, n_segments)?;
        let v = x.value().as_slice();
        let mut max = vec![f64::NEG_INFINITY; n_segments];
        for (&s, &val) in segments.iter().zip(v) {
            max[s] = max[s].max(val);
        }
        let mut denom = vec![0.0; n_segments];
        let mut exps: Vec<f64> = segments
            .iter()
            .zip(v)
            .map(|(&s, &val)| {
                let e = (val - max[s]).exp();
                denom[s] += e;
                e
            })
            .collect();
        for (e, &s) in exps.iter_mut().zip(segments.iter()) {
            *e /= denom[s];
        }
        let out = Matrix::column(&exps);
        if !x.is_tracked() {
            return Ok(TapeMatrix::constant(out));
        }
        let out = Arc::new(out);
        let saved = Arc::clone(&out);
        Ok(self.push_shared(out, Op::SegmentSoftmax(Slot::of(x), segments, saved)))
    }

    fn push_shared(&mut self, value: Arc<Matrix>, op: Op) -> TapeMatrix {
        let id = self.nodes.len();
        self.nodes.push(Node {
            shape: value.shape(),
            op,
        });
        TapeMatrix {
            value,
            node: Some(id),
        }
    }

    /// Reverse accumulation from a `[1 x 1]` loss.
    ///
    /// Errors if the loss is not scalar or if this recording was already
    /// differentiated. Gradients are kept only for leaves.
    pub fn backward(&mut self, loss: &TapeMatrix) -> Result<Gradients> {
        if loss.shape() != (1, 1) {
            return Err(Error::shape("backward", loss.shape(), (1, 1)));
        }
        if self.consumed {
            return Err(Error::Tape(
                "backward already ran on this tape; call reset() first".into(),
            ));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Matrix>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        let Some(root) = loss.node else {
            return Ok(Gradients { grads });
        };
        grads[root] = Some(Matrix::scalar(1.0));

        for id in (0..=root).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            debug_assert_eq!(g.shape(), node.shape);
            propagate(&node.op, &g, &mut grads)?;
        }

        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], node: Option<NodeId>, g: Matrix) {
    if let Some(id) = node {
        match &mut grads[id] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

fn propagate(op: &Op, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
    match op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            if a.is_tracked() {
                accumulate(grads, a.node, Matrix::gemm(g, false, b.value(), true)?);
            }
            if b.is_tracked() {
                accumulate(grads, b.node, Matrix::gemm(a.value(), true, g, false)?);
            }
        }
        Op::Add(a, b) => {
            accumulate(grads, a.node, g.clone());
            accumulate(grads, b.node, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(grads, a.node, g.clone());
            if b.is_tracked() {
                accumulate(grads, b.node, g.map(|x| -x));
            }
        }
        Op::Mul(a, b) => {
            if a.is_tracked() {
                accumulate(grads, a.node, g.zip_map(b.value(), |x, y| x * y));
            }
            if b.is_tracked() {
                accumulate(grads, b.node, g.zip_map(a.value(), |x, y| x * y));
            }
        }
        Op::Scale(a, s) => accumulate(grads, a.node, g.map(|x| x * s)),
        Op::Shift(a) => accumulate(grads, a.node, g.clone()),
        Op::Sigmoid(a, out) => {
            accumulate(grads, a.node, g.zip_map(out, |gi, y| gi * y * (1.0 - y)))
        }
        Op::Tanh(a, out) => accumulate(grads, a.node, g.zip_map(out, |gi, y| gi * (1.0 - y * y))),
        Op::Relu(a, out) => accumulate(
            grads,
            a.node,
            g.zip_map(out, |gi, y| if y > 0.0 { gi } else { 0.0 }),
        ),
        Op::LeakyRelu(a, slope) => accumulate(
            grads,
            a.node,
            g.zip_map(a.value(), |gi, x| if x > 0.0 { gi } else { slope * gi }),
        ),
        Op::Softplus(a) => accumulate(grads, a.node, g.zip_map(a.value(), |gi, x| gi * sigmoid(x))),
        Op::AddRow(a, row) => {
            accumulate(grads, a.node, g.clone());
            if row.is_tracked() {
                let mut acc = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, &v) in acc.as_mut_slice().iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(grads, row.node, acc);
            }
        }
        Op::MulCol(a, col) => {
            if a.is_tracked() {
                let mut ga = g.clone();
                for r in 0..ga.rows() {
                    let s = col.value().get(r, 0);
                    for v in ga.row_mut(r) {
                        *v *= s;
                    }
                }
                accumulate(grads, a.node, ga);
            }
            if col.is_tracked() {
                let gc: Vec<f64> = (0..g.rows())
                    .map(|r| {
                        g.row(r)
                            .iter()
                            .zip(a.value().row(r))
                            .map(|(x, y)| x * y)
                            .sum()
                    })
                    .collect();
                accumulate(grads, col.node, Matrix::column(&gc));
            }
        }
        Op::StackRows(top, bottom) => {
            let split = top.rows() * g.cols();
            let (head, tail) = g.as_slice().split_at(split);
            if top.is_tracked() {
                accumulate(
                    grads,
                    top.node,
                    Matrix::from_vec(top.rows(), g.cols(), head.to_vec())?,
                );
            }
            if bottom.is_tracked() {
                accumulate(
                    grads,
                    bottom.node,
                    Matrix::from_vec(bottom.rows(), g.cols(), tail.to_vec())?,
                );
            }
        }
        Op::SliceRows(x, lo) => {
            let mut gx = Matrix::zeros(x.rows(), x.cols());
            let c = x.cols();
            gx.as_mut_slice()[lo * c..lo * c + g.len()].copy_from_slice(g.as_slice());
            accumulate(grads, x.node, gx);
        }
        Op::SliceCols(x, lo) => {
            let mut gx = Matrix::zeros(x.rows(), x.cols());
            for r in 0..g.rows() {
                gx.row_mut(r)[*lo..lo + g.cols()].copy_from_slice(g.row(r));
            }
            accumulate(grads, x.node, gx);
        }
        Op::Sum(x) => accumulate(
            grads,
            x.node,
            Matrix::filled(x.rows(), x.cols(), g.get(0, 0)),
        ),
        Op::SumCols(x) => {
            let mut gx = Matrix::zeros(x.rows(), x.cols());
            for r in 0..x.rows() {
                let v = g.get(r, 0);
                gx.row_mut(r).fill(v);
            }
            accumulate(grads, x.node, gx);
        }
        Op::GatherRows(x, idx) => {
            let mut gx = Matrix::zeros(x.rows(), x.cols());
            for (i, &j) in idx.iter().enumerate() {
                for (o, &v) in gx.row_mut(j).iter_mut().zip(g.row(i)) {
                    *o += v;
                }
            }
            accumulate(grads, x.node, gx);
        }
        Op::ScatterAddRows(x, idx) => {
            let mut gx = Matrix::zeros(x.rows(), x.cols());
            for (i, &j) in idx.iter().enumerate() {
                gx.row_mut(i).copy_from_slice(g.row(j));
            }
            accumulate(grads, x.node, gx);
        }
        Op::Spmm(x, agg) => accumulate(grads, x.node, agg.apply_transpose(g)),
        Op::SegmentSoftmax(x, segments, out) => {
            let n_seg = segments.iter().copied().max().map_or(0, |m| m + 1);
            let mut dot = vec![0.0; n_seg];
            let y = out.as_slice();
            let gy = g.as_slice();
            for ((&s, &yi), &gi) in segments.iter().zip(y).zip(gy) {
                dot[s] += yi * gi;
            }
            let gx: Vec<f64> = segments
                .iter()
                .zip(y)
                .zip(gy)
                .map(|((&s, &yi), &gi)| yi * (gi - dot[s]))
                .collect();
            accumulate(grads, x.node, Matrix::column(&gx));
        }
    }
    Ok(())
}
