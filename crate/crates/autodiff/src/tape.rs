use std::cell::{Cell, RefCell};
use std::sync::Arc;

use crate::tensor::{gemm, Tensor};
use crate::AutodiffError;

/// Sparse `rows x cols` matrix in coordinate form, used for graph propagation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sparse {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f32)>,
}

impl Sparse {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, weight: f32) {
        debug_assert!(row < self.rows && col < self.cols);
        self.entries.push((row, col, weight));
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.rows, self.cols]);
        let c = self.cols;
        for &(i, j, w) in &self.entries {
            t.data_mut()[i * c + j] += w;
        }
        t
    }
}

enum Op {
    Leaf,
    MatMul { a: usize, b: usize, a_t: bool, b_t: bool, m: usize, k: usize, n: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow { a: usize, row: usize },
    MulCol { a: usize, col: usize },
    Affine { a: usize, scale: f32 },
    Relu(usize),
    Sigmoid(usize),
    Softmax(usize),
    LayerNorm { a: usize, gamma: usize, beta: usize, xhat: Vec<f32>, rstd: Vec<f32> },
    Embedding { table: usize, ids: Vec<usize> },
    SpMM { x: usize, matrix: Arc<Sparse> },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols { a: usize, start: usize },
    SliceRows { a: usize, start: usize },
    Transpose(usize),
    Sum(usize),
    Mean(usize),
    Nll { logp: usize, targets: Vec<usize>, pad: usize, count: usize },
    ScatterCols { a: usize, ids: Vec<usize> },
    PadCols(usize),
    LogFloor { a: usize, floor: f32 },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Record of executed operations, replayed in reverse by [`Tape::backward`].
///
/// A tape built with [`Tape::no_grad`] keeps values only, which is what
/// inference wants.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grad_enabled: bool,
    consumed: Cell<bool>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients of a scalar with respect to every leaf that requires them.
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&[f32]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    pub fn tensor(&self, var: Var<'_>) -> Option<Tensor> {
        self.get(var)
            .map(|g| Tensor::new(self.shapes[var.id].clone(), g.to_vec()).expect("gradient shape"))
    }

    pub(crate) fn take(&mut self, id: usize) -> Option<Vec<f32>> {
        self.grads.get_mut(id).and_then(Option::take)
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, left: &Tensor, right: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: left.shape().to_vec(),
        right: right.shape().to_vec(),
    }
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn accumulate(slot: &mut Option<Vec<f32>>, len: usize, f: impl FnOnce(&mut [f32])) {
    let buf = slot.get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
            consumed: Cell::new(false),
        }
    }

    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.leaf_shared(Arc::new(value), true)
    }

    /// Input excluded from differentiation.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf_shared(Arc::new(value), false)
    }

    pub fn leaf_shared(&self, value: Arc<Tensor>, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Side of every kink recorded so far: one flag per element of each ReLU
    /// input (`x > 0`) and log-floor input (`x > floor`). Two evaluations of
    /// one function with equal patterns lie on the same smooth piece. Empty
    /// on a no-grad tape, which does not record ops.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let nodes = self.nodes.borrow();
        let mut out = Vec::new();
        for node in nodes.iter() {
            match node.op {
                Op::Relu(a) => out.extend(nodes[a].value.data().iter().map(|&x| x > 0.0)),
                Op::LogFloor { a, floor } => out.extend(nodes[a].value.data().iter().map(|&x| x > floor)),
                _ => {}
            }
        }
        out
    }

    fn value_of(&self, id: usize) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    fn push(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = self.grad_enabled && inputs.iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            value: Arc::new(value),
            op: if requires_grad { op } else { Op::Leaf },
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding<'t>(&'t self, table: Var<'t>, ids: &[usize]) -> Result<Var<'t>, AutodiffError> {
        let t = table.value();
        let (v, h) = dims(&t);
        let mut out = Vec::with_capacity(ids.len() * h);
        for &id in ids {
            if id >= v {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "embedding",
                    index: id,
                    bound: v,
                });
            }
            out.extend_from_slice(t.row(id));
        }
        Ok(self.push(
            Tensor::matrix(ids.len(), h, out),
            Op::Embedding {
                table: table.id,
                ids: ids.to_vec(),
            },
            &[table.id],
        ))
    }

    /// Sparse-dense product `matrix . x`.
    pub fn spmm<'t>(&'t self, matrix: Arc<Sparse>, x: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        let xv = x.value();
        let (r, h) = dims(&xv);
        if r != matrix.cols {
            return Err(AutodiffError::ShapeMismatch {
                op: "spmm",
                left: vec![matrix.rows, matrix.cols],
                right: xv.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; matrix.rows * h];
        for &(i, j, w) in &matrix.entries {
            let src = xv.row(j);
            for (o, s) in out[i * h..(i + 1) * h].iter_mut().zip(src) {
                *o += w * s;
            }
        }
        let rows = matrix.rows;
        Ok(self.push(
            Tensor::matrix(rows, h, out),
            Op::SpMM { x: x.id, matrix },
            &[x.id],
        ))
    }

    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>, AutodiffError> {
        let values: Vec<Arc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let rows = values.first().map_or(0, |v| v.rows());
        for v in &values {
            if v.rows() != rows {
                return Err(mismatch("concat_cols", &values[0], v));
            }
        }
        let total: usize = values.iter().map(|v| v.cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &values {
                out.extend_from_slice(v.row(r));
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(self.push(Tensor::matrix(rows, total, out), Op::ConcatCols(ids.clone()), &ids))
    }

    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>, AutodiffError> {
        let values: Vec<Arc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let cols = values.first().map_or(0, |v| v.cols());
        for v in &values {
            if v.cols() != cols {
                return Err(mismatch("concat_rows", &values[0], v));
            }
        }
        let rows: usize = values.iter().map(|v| v.rows()).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for v in &values {
            out.extend_from_slice(v.data());
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(self.push(Tensor::matrix(rows, cols, out), Op::ConcatRows(ids.clone()), &ids))
    }

    /// Reverse pass from a single-element `loss`. A tape supports one pass.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, AutodiffError> {
        if self.consumed.replace(true) || !self.grad_enabled {
            return Err(AutodiffError::NoTape);
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(AutodiffError::NotScalar(nodes[loss.id].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; nodes.len()];
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backward_node(&nodes, node, &g, &mut grads);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        for (id, node) in nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                grads[id] = None;
            } else if grads[id].is_none() && id <= loss.id {
                grads[id] = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(Gradients { grads, shapes })
    }
}

fn backward_node(nodes: &[Node], node: &Node, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
    let val = |i: usize| -> &Tensor { &nodes[i].value };
    let needs = |i: usize| nodes[i].requires_grad;
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul { a, b, a_t, b_t, m, k, n } => {
            if needs(a) {
                let bv = val(b).data();
                accumulate(&mut grads[a], m * k, |da| {
                    if a_t {
                        gemm(k, n, m, bv, b_t, g, true, da, 1.0);
                    } else {
                        gemm(m, n, k, g, false, bv, !b_t, da, 1.0);
                    }
                });
            }
            if needs(b) {
                let av = val(a).data();
                accumulate(&mut grads[b], k * n, |db| {
                    if b_t {
                        gemm(n, m, k, g, true, av, a_t, db, 1.0);
                    } else {
                        gemm(k, m, n, av, !a_t, g, false, db, 1.0);
                    }
                });
            }
        }
        &Op::Add(a, b) | &Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            if needs(a) {
                accumulate(&mut grads[a], g.len(), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            if needs(b) {
                accumulate(&mut grads[b], g.len(), |d| {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += sign * g)
                });
            }
        }
        &Op::Mul(a, b) => {
            if needs(a) {
                let bv = val(b).data();
                accumulate(&mut grads[a], g.len(), |d| {
                    for i in 0..g.len() {
                        d[i] += g[i] * bv[i];
                    }
                });
            }
            if needs(b) {
                let av = val(a).data();
                accumulate(&mut grads[b], g.len(), |d| {
                    for i in 0..g.len() {
                        d[i] += g[i] * av[i];
                    }
                });
            }
        }
        &Op::AddRow { a, row } => {
            if needs(a) {
                accumulate(&mut grads[a], g.len(), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            if needs(row) {
                let c = val(row).len();
                accumulate(&mut grads[row], c, |d| {
                    for chunk in g.chunks(c) {
                        d.iter_mut().zip(chunk).for_each(|(d, g)| *d += g);
                    }
                });
            }
        }
        &Op::MulCol { a, col } => {
            let (r, c) = dims(val(a));
            if needs(a) {
                let cv = val(col).data();
                accumulate(&mut grads[a], g.len(), |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] += g[i * c + j] * cv[i];
                        }
                    }
                });
            }
            if needs(col) {
                let av = val(a).data();
                accumulate(&mut grads[col], r, |d| {
                    for i in 0..r {
                        let mut s = 0.0;
                        for j in 0..c {
                            s += g[i * c + j] * av[i * c + j];
                        }
                        d[i] += s;
                    }
                });
            }
        }
        &Op::Affine { a, scale } => {
            accumulate(&mut grads[a], g.len(), |d| {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += scale * g)
            });
        }
        &Op::Relu(a) => {
            let x = val(a).data();
            accumulate(&mut grads[a], g.len(), |d| {
                for i in 0..g.len() {
                    if x[i] > 0.0 {
                        d[i] += g[i];
                    }
                }
            });
        }
        &Op::Sigmoid(a) => {
            let y = node.value.data();
            accumulate(&mut grads[a], g.len(), |d| {
                for i in 0..g.len() {
                    d[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            });
        }
        &Op::Softmax(a) => {
            let y = &node.value;
            let c = y.cols();
            accumulate(&mut grads[a], g.len(), |d| {
                for ((drow, grow), yrow) in d.chunks_mut(c).zip(g.chunks(c)).zip(y.data().chunks(c)) {
                    let dot: f32 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                    for j in 0..c {
                        drow[j] += yrow[j] * (grow[j] - dot);
                    }
                }
            });
        }
        Op::LayerNorm { a, gamma, beta, xhat, rstd } => {
            let (a, gamma, beta) = (*a, *gamma, *beta);
            let c = val(a).cols();
            let gv = val(gamma).data();
            if needs(gamma) {
                accumulate(&mut grads[gamma], c, |d| {
                    for (grow, xrow) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            d[j] += grow[j] * xrow[j];
                        }
                    }
                });
            }
            if needs(beta) {
                accumulate(&mut grads[beta], c, |d| {
                    for grow in g.chunks(c) {
                        d.iter_mut().zip(grow).for_each(|(d, g)| *d += g);
                    }
                });
            }
            if needs(a) {
                accumulate(&mut grads[a], g.len(), |d| {
                    let mut gx = vec![0.0; c];
                    for (r, ((drow, grow), xrow)) in
                        d.chunks_mut(c).zip(g.chunks(c)).zip(xhat.chunks(c)).enumerate()
                    {
                        for j in 0..c {
                            gx[j] = grow[j] * gv[j];
                        }
                        let mean_g: f32 = gx.iter().sum::<f32>() / c as f32;
                        let mean_gx: f32 =
                            gx.iter().zip(xrow).map(|(g, x)| g * x).sum::<f32>() / c as f32;
                        for j in 0..c {
                            drow[j] += rstd[r] * (gx[j] - mean_g - xrow[j] * mean_gx);
                        }
                    }
                });
            }
        }
        Op::Embedding { table, ids } => {
            let t = val(*table);
            let h = t.cols();
            accumulate(&mut grads[*table], t.len(), |d| {
                for (k, &id) in ids.iter().enumerate() {
                    for j in 0..h {
                        d[id * h + j] += g[k * h + j];
                    }
                }
            });
        }
        Op::SpMM { x, matrix } => {
            let xv = val(*x);
            let h = xv.cols();
            accumulate(&mut grads[*x], xv.len(), |d| {
                for &(i, j, w) in &matrix.entries {
                    for t in 0..h {
                        d[j * h + t] += w * g[i * h + t];
                    }
                }
            });
        }
        Op::ConcatCols(parts) => {
            let total = node.value.cols();
            let mut offset = 0;
            for &p in parts {
                let (r, c) = dims(val(p));
                if needs(p) {
                    accumulate(&mut grads[p], r * c, |d| {
                        for i in 0..r {
                            for j in 0..c {
                                d[i * c + j] += g[i * total + offset + j];
                            }
                        }
                    });
                }
                offset += c;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let n = val(p).len();
                if needs(p) {
                    accumulate(&mut grads[p], n, |d| {
                        d.iter_mut().zip(&g[offset..offset + n]).for_each(|(d, g)| *d += g)
                    });
                }
                offset += n;
            }
        }
        &Op::SliceCols { a, start } => {
            let (r, c) = dims(val(a));
            let w = node.value.cols();
            accumulate(&mut grads[a], r * c, |d| {
                for i in 0..r {
                    for j in 0..w {
                        d[i * c + start + j] += g[i * w + j];
                    }
                }
            });
        }
        &Op::SliceRows { a, start } => {
            let (r, c) = dims(val(a));
            accumulate(&mut grads[a], r * c, |d| {
                d[start * c..start * c + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(d, g)| *d += g)
            });
        }
        &Op::Transpose(a) => {
            let (r, c) = dims(val(a));
            accumulate(&mut grads[a], r * c, |d| {
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] += g[j * r + i];
                    }
                }
            });
        }
        &Op::Sum(a) | &Op::Mean(a) => {
            let n = val(a).len();
            let scale = if matches!(node.op, Op::Mean(_)) && n > 0 {
                g[0] / n as f32
            } else {
                g[0]
            };
            accumulate(&mut grads[a], n, |d| d.iter_mut().for_each(|d| *d += scale));
        }
        Op::Nll { logp, targets, pad, count } => {
            let lp = val(*logp);
            let c = lp.cols();
            accumulate(&mut grads[*logp], lp.len(), |d| {
                if *count == 0 {
                    return;
                }
                let scale = g[0] / *count as f32;
                for (t, &y) in targets.iter().enumerate() {
                    if y != *pad {
                        d[t * c + y] -= scale;
                    }
                }
            });
        }
        Op::ScatterCols { a, ids } => {
            let (r, c) = dims(val(*a));
            let w = node.value.cols();
            accumulate(&mut grads[*a], r * c, |d| {
                for i in 0..r {
                    for (l, &id) in ids.iter().enumerate() {
                        d[i * c + l] += g[i * w + id];
                    }
                }
            });
        }
        &Op::PadCols(a) => {
            let (r, c) = dims(val(a));
            let w = node.value.cols();
            accumulate(&mut grads[a], r * c, |d| {
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] += g[i * w + j];
                    }
                }
            });
        }
        &Op::LogFloor { a, floor } => {
            let x = val(a).data();
            accumulate(&mut grads[a], g.len(), |d| {
                for i in 0..g.len() {
                    if x[i] > floor {
                        d[i] += g[i] / x[i];
                    }
                }
            });
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn rows(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.rows()
    }

    pub fn cols(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.cols()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        self.tape.push(value, op, &[self.id])
    }

    fn matmul_impl(&self, other: Var<'t>, b_t: bool) -> Result<Var<'t>, AutodiffError> {
        let (a, b) = (self.value(), other.value());
        let (m, k) = dims(&a);
        let (n, kb) = if b_t {
            dims(&b)
        } else {
            let (r, c) = dims(&b);
            (c, r)
        };
        if k != kb {
            return Err(mismatch(if b_t { "matmul_t" } else { "matmul" }, &a, &b));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), b_t, &mut out, 0.0);
        Ok(self.tape.push(
            Tensor::matrix(m, n, out),
            Op::MatMul {
                a: self.id,
                b: other.id,
                a_t: false,
                b_t,
                m,
                k,
                n,
            },
            &[self.id, other.id],
        ))
    }

    /// `self . other`.
    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.matmul_impl(other, false)
    }

    /// `self . other^T`.
    pub fn matmul_t(&self, other: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.matmul_impl(other, true)
    }

    fn zip(
        &self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f32, f32) -> f32,
        op: Op,
    ) -> Result<Var<'t>, AutodiffError> {
        let (a, b) = (self.value(), other.value());
        if dims(&a) != dims(&b) {
            return Err(mismatch(name, &a, &b));
        }
        let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.tape.push(value, op, &[self.id, other.id]))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.zip(other, "add", |x, y| x + y, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.zip(other, "sub", |x, y| x - y, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.zip(other, "mul", |x, y| x * y, Op::Mul(self.id, other.id))
    }

    /// Adds a `1 x c` row to every row.
    pub fn add_row(&self, row: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        let (a, r) = (self.value(), row.value());
        let c = a.cols();
        if r.len() != c {
            return Err(mismatch("add_row", &a, &r));
        }
        let mut data = a.data().to_vec();
        for chunk in data.chunks_mut(c) {
            chunk.iter_mut().zip(r.data()).for_each(|(x, b)| *x += b);
        }
        let value = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.tape.push(
            value,
            Op::AddRow {
                a: self.id,
                row: row.id,
            },
            &[self.id, row.id],
        ))
    }

    /// Scales row `i` by `col[i]`.
    pub fn mul_col(&self, col: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        let (a, cv) = (self.value(), col.value());
        let (r, c) = dims(&a);
        if cv.len() != r {
            return Err(mismatch("mul_col", &a, &cv));
        }
        let mut data = a.data().to_vec();
        for (i, chunk) in data.chunks_mut(c.max(1)).enumerate().take(r) {
            chunk.iter_mut().for_each(|x| *x *= cv.data()[i]);
        }
        let value = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.tape.push(
            value,
            Op::MulCol {
                a: self.id,
                col: col.id,
            },
            &[self.id, col.id],
        ))
    }

    pub fn scale(&self, s: f32) -> Var<'t> {
        self.affine(s, 0.0)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&self, scale: f32, shift: f32) -> Var<'t> {
        let a = self.value();
        let data = a.data().iter().map(|x| scale * x + shift).collect();
        let value = Tensor::new(a.shape().to_vec(), data).expect("same shape");
        self.unary(value, Op::Affine { a: self.id, scale })
    }

    pub fn relu(&self) -> Var<'t> {
        let a = self.value();
        let data = a.data().iter().map(|x| x.max(0.0)).collect();
        let value = Tensor::new(a.shape().to_vec(), data).expect("same shape");
        self.unary(value, Op::Relu(self.id))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        let a = self.value();
        let data = a.data().iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect();
        let value = Tensor::new(a.shape().to_vec(), data).expect("same shape");
        self.unary(value, Op::Sigmoid(self.id))
    }

    /// Row-wise softmax.
    pub fn softmax(&self) -> Var<'t> {
        self.softmax_impl(None).expect("unmasked softmax")
    }

    /// Row-wise softmax of `x + mask`; use `f32::NEG_INFINITY` in `mask` to
    /// exclude a slot. Masked slots come out exactly zero and a fully masked
    /// row is all zeros.
    pub fn softmax_masked(&self, mask: &Tensor) -> Result<Var<'t>, AutodiffError> {
        self.softmax_impl(Some(mask))
    }

    fn softmax_impl(&self, mask: Option<&Tensor>) -> Result<Var<'t>, AutodiffError> {
        let a = self.value();
        let (r, c) = dims(&a);
        if let Some(m) = mask {
            if dims(m) != (r, c) {
                return Err(mismatch("softmax_masked", &a, m));
            }
        }
        let mut data = a.data().to_vec();
        for i in 0..r {
            let row = &mut data[i * c..(i + 1) * c];
            if let Some(m) = mask {
                row.iter_mut().zip(m.row(i)).for_each(|(x, m)| *x += m);
            }
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            if max == f32::NEG_INFINITY {
                row.iter_mut().for_each(|x| *x = 0.0);
                continue;
            }
            let mut exps = Vec::with_capacity(c);
            let mut sum = 0.0f64;
            for &x in row.iter() {
                let e = ((x - max) as f64).exp();
                exps.push(e);
                sum += e;
            }
            row.iter_mut().zip(&exps).for_each(|(x, e)| *x = (e / sum) as f32);
        }
        let value = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.unary(value, Op::Softmax(self.id)))
    }

    /// Row-wise layer normalisation with `eps = 1e-5`.
    pub fn layer_norm(&self, gamma: Var<'t>, beta: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        const EPS: f32 = 1e-5;
        let (a, gv, bv) = (self.value(), gamma.value(), beta.value());
        let (r, c) = dims(&a);
        if gv.len() != c {
            return Err(mismatch("layer_norm", &a, &gv));
        }
        if bv.len() != c {
            return Err(mismatch("layer_norm", &a, &bv));
        }
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = a.row(i);
            let mean = row.iter().map(|&x| x as f64).sum::<f64>() / c as f64;
            let var = row.iter().map(|&x| (x as f64 - mean) * (x as f64 - mean)).sum::<f64>() / c as f64;
            let r64 = 1.0 / (var + EPS as f64).sqrt();
            rstd[i] = r64 as f32;
            for j in 0..c {
                let xh = (row[j] as f64 - mean) * r64;
                xhat[i * c + j] = xh as f32;
                out[i * c + j] = (xh * gv.data()[j] as f64 + bv.data()[j] as f64) as f32;
            }
        }
        let value = Tensor::new(a.shape().to_vec(), out)?;
        Ok(self.tape.push(
            value,
            Op::LayerNorm {
                a: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                rstd,
            },
            &[self.id, gamma.id, beta.id],
        ))
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var<'t>, AutodiffError> {
        let a = self.value();
        let (r, c) = dims(&a);
        if start + len > c {
            return Err(AutodiffError::IndexOutOfRange {
                op: "slice_cols",
                index: start + len,
                bound: c,
            });
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&a.row(i)[start..start + len]);
        }
        Ok(self.unary(Tensor::matrix(r, len, out), Op::SliceCols { a: self.id, start }))
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Var<'t>, AutodiffError> {
        let a = self.value();
        let (r, c) = dims(&a);
        if start + len > r {
            return Err(AutodiffError::IndexOutOfRange {
                op: "slice_rows",
                index: start + len,
                bound: r,
            });
        }
        let out = a.data()[start * c..(start + len) * c].to_vec();
        Ok(self.unary(Tensor::matrix(len, c, out), Op::SliceRows { a: self.id, start }))
    }

    pub fn transpose(&self) -> Var<'t> {
        let a = self.value();
        let (r, c) = dims(&a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = a.data()[i * c + j];
            }
        }
        self.unary(Tensor::matrix(c, r, out), Op::Transpose(self.id))
    }

    pub fn sum(&self) -> Var<'t> {
        let s = self.value().data().iter().map(|&x| x as f64).sum::<f64>();
        self.unary(Tensor::scalar(s as f32), Op::Sum(self.id))
    }

    /// Mean of all elements; zero for an empty tensor.
    pub fn mean(&self) -> Var<'t> {
        let a = self.value();
        let m = if a.is_empty() {
            0.0
        } else {
            (a.data().iter().map(|&x| x as f64).sum::<f64>() / a.len() as f64) as f32
        };
        self.unary(Tensor::scalar(m), Op::Mean(self.id))
    }

    /// Mean of `-self[t, targets[t]]` over positions whose target is not `pad`.
    /// With every position padded the loss is zero and so is its gradient.
    pub fn nll_loss(&self, targets: &[usize], pad: usize) -> Result<Var<'t>, AutodiffError> {
        let lp = self.value();
        let (r, c) = dims(&lp);
        if targets.len() != r {
            return Err(AutodiffError::ShapeMismatch {
                op: "nll_loss",
                left: lp.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let mut total = 0.0;
        let mut count = 0;
        for (t, &y) in targets.iter().enumerate() {
            if y == pad {
                continue;
            }
            if y >= c {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "nll_loss",
                    index: y,
                    bound: c,
                });
            }
            total -= lp.data()[t * c + y];
            count += 1;
        }
        let loss = if count == 0 { 0.0 } else { total / count as f32 };
        Ok(self.unary(
            Tensor::scalar(loss),
            Op::Nll {
                logp: self.id,
                targets: targets.to_vec(),
                pad,
                count,
            },
        ))
    }

    /// Sums column `l` into output column `ids[l]` of a `rows x width` result.
    pub fn scatter_cols(&self, ids: &[usize], width: usize) -> Result<Var<'t>, AutodiffError> {
        let a = self.value();
        let (r, c) = dims(&a);
        if ids.len() != c {
            return Err(AutodiffError::ShapeMismatch {
                op: "scatter_cols",
                left: a.shape().to_vec(),
                right: vec![ids.len()],
            });
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= width) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "scatter_cols",
                index: bad,
                bound: width,
            });
        }
        let mut out = vec![0.0; r * width];
        for i in 0..r {
            for (l, &id) in ids.iter().enumerate() {
                out[i * width + id] += a.data()[i * c + l];
            }
        }
        Ok(self.unary(
            Tensor::matrix(r, width, out),
            Op::ScatterCols {
                a: self.id,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Right-pads each row with zeros up to `width` columns.
    pub fn pad_cols(&self, width: usize) -> Result<Var<'t>, AutodiffError> {
        let a = self.value();
        let (r, c) = dims(&a);
        if width < c {
            return Err(AutodiffError::IndexOutOfRange {
                op: "pad_cols",
                index: c,
                bound: width,
            });
        }
        let mut out = vec![0.0; r * width];
        for i in 0..r {
            out[i * width..i * width + c].copy_from_slice(a.row(i));
        }
        Ok(self.unary(Tensor::matrix(r, width, out), Op::PadCols(self.id)))
    }

    /// `ln(max(x, floor))`.
    pub fn log_floor(&self, floor: f32) -> Var<'t> {
        let a = self.value();
        let data = a.data().iter().map(|&x| x.max(floor).ln()).collect();
        let value = Tensor::new(a.shape().to_vec(), data).expect("same shape");
        self.unary(value, Op::LogFloor { a: self.id, floor })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f32], b: &[f32], tol: f32) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let y = x.softmax().value();
        assert!(close(y.data(), &[1.0 / 3.0; 3], 1e-7));
    }

    #[test]
    fn masked_softmax_zeroes_masked_slots() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(2, 3, vec![1.0, 5.0, 2.0, 0.3, 0.1, 0.2]));
        let ninf = f32::NEG_INFINITY;
        let mask = Tensor::matrix(2, 3, vec![ninf, 0.0, ninf, ninf, ninf, ninf]);
        let y = x.softmax_masked(&mask).unwrap().value();
        assert_eq!(y.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_matmul() {
        let tape = Tape::new();
        let i = tape.constant(Tensor::eye(2));
        let x = tape.leaf(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        assert_eq!(i.matmul(x).unwrap().value().data(), x.value().data());
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[2, 3]));
        let msg = a.matmul(b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3] vs [2, 3]"), "{msg}");
        assert!(a.matmul_t(b).is_ok());
    }

    #[test]
    fn layer_norm_hand_values() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let g = tape.constant(Tensor::full(&[3], 1.0));
        let b = tape.constant(Tensor::zeros(&[3]));
        let y = x.layer_norm(g, b).unwrap().value();
        let s = (2.0f32 / 3.0).sqrt();
        let expected = [-1.0 / s, 0.0, 1.0 / s];
        assert!(close(y.data(), &expected, 1e-3));
        assert!(close(y.data(), &[-1.2247, 0.0, 1.2247], 1e-3));
    }

    #[test]
    fn nll_examples() {
        let tape = Tape::new();
        let lp = tape.leaf(Tensor::matrix(2, 2, vec![0.0, f32::MIN, f32::MIN, 0.0]));
        assert_eq!(lp.nll_loss(&[0, 1], 99).unwrap().value().item(), 0.0);

        let quarter = (0.25f32).ln();
        let lp = tape.leaf(Tensor::full(&[2, 4], quarter));
        let loss = lp.nll_loss(&[1, 3], 0).unwrap().value().item();
        assert!((loss - 4f32.ln()).abs() < 1e-6);
        assert!((loss - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn nll_all_padded_is_zero_with_zero_gradient() {
        let tape = Tape::new();
        let lp = tape.leaf(Tensor::full(&[3, 4], -1.0));
        let loss = lp.nll_loss(&[0, 0, 0], 0).unwrap();
        assert_eq!(loss.value().item(), 0.0);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(lp).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn sum_and_square_gradients() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let loss = x.mul(x).unwrap().sum();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[2.0, 4.0]);

        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.3, -2.0, 7.0]));
        let grads = tape.backward(x.sum()).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn second_backward_is_an_error() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0]));
        let loss = x.sum();
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(AutodiffError::NoTape)));
    }

    #[test]
    fn backward_needs_scalar() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(AutodiffError::NotScalar(_))));
    }

    #[test]
    fn constants_and_no_grad_tapes_get_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let x = tape.leaf(Tensor::vector(vec![3.0, 4.0]));
        let loss = c.mul(x).unwrap().sum();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap(), &[1.0, 2.0]);

        let tape = Tape::no_grad();
        let x = tape.leaf(Tensor::vector(vec![3.0]));
        assert!(!x.requires_grad());
        assert!(tape.backward(x.sum()).is_err());
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![3.0, 4.0]));
        let y = tape.leaf(Tensor::vector(vec![1.0]));
        let grads = tape.backward(y.sum()).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn scatter_and_pad() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(1, 3, vec![0.2, 0.3, 0.5]));
        let s = a.scatter_cols(&[4, 1, 4], 5).unwrap().value();
        assert_eq!(s.data(), &[0.0, 0.3, 0.0, 0.0, 0.7]);
        let p = a.pad_cols(5).unwrap().value();
        assert_eq!(p.data(), &[0.2, 0.3, 0.5, 0.0, 0.0]);
        assert!(a.scatter_cols(&[0, 1, 5], 5).is_err());
    }

    #[test]
    fn spmm_matches_dense() {
        let tape = Tape::new();
        let mut m = Sparse::new(2, 3);
        m.push(0, 0, 0.5);
        m.push(0, 2, 0.5);
        m.push(1, 1, 2.0);
        let x = tape.leaf(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let dense = tape.constant(m.to_dense());
        let a = tape.spmm(Arc::new(m), x).unwrap().value();
        let b = dense.matmul(x).unwrap().value();
        assert_eq!(a.data(), b.data());
    }
}
