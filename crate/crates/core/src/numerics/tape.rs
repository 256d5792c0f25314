//! Reverse-mode differentiation over a define-by-run record of dense
//! matrix primitives.
//!
//! Every primitive evaluates eagerly and appends a node to the [`Tape`].
//! Nodes are pushed after their inputs, so the node order is a topological
//! order and [`Tape::backward`] only has to walk it in reverse.

use std::rc::Rc;

use super::tensor::{gemm, Op as Trans};
use super::{NumericsError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Source and destination row indices for edge-wise primitives.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EdgeIndex {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
}

impl EdgeIndex {
    pub fn new(src: Vec<usize>, dst: Vec<usize>) -> Self {
        assert_eq!(src.len(), dst.len(), "edge endpoint lists differ in length");
        Self { src, dst }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SumAll(Var),
    RowSum(Var),
    GatherRows(Var, Rc<[usize]>),
    ScatterAddRows(Var, Rc<[usize]>),
    MaskedRowSoftmax(Var, Rc<[bool]>),
    SegmentSoftmax(Var, Rc<[usize]>),
    EdgeWeightedSum {
        coef: Var,
        feats: Var,
        edges: Rc<EdgeIndex>,
    },
    BilinearEdgeScores {
        left: Var,
        right: Var,
        edges: Rc<EdgeIndex>,
        levels: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Rc<[usize]>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The computation record.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zero when `var` did not
    /// influence the loss.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        match self.grads[var.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[var.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

fn shape_err(op: &'static str, detail: String) -> NumericsError {
    NumericsError::Shape { op, detail }
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                "add",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let mut out = self.value(a).clone();
        out.axpy(1.0, self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds a `1 x m` row to every row of an `n x m` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, NumericsError> {
        let (n, m) = self.shape(a);
        if self.shape(bias) != (1, m) {
            return Err(shape_err(
                "add_row",
                format!("bias {:?} for {n}x{m} input", self.shape(bias)),
            ));
        }
        let mut out = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for r in 0..n {
            for (x, y) in out.row_mut(r).iter_mut().zip(&b) {
                *x += y;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(out, Op::AddRow(a, bias), rg))
    }

    /// Elementwise product of equal-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                "mul",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let data = va.iter().zip(vb).map(|(x, y)| x * y).collect();
        let (r, c) = self.shape(a);
        let out = Tensor::from_vec(r, c, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Scales row `i` of an `n x m` matrix by entry `i` of an `n x 1` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, NumericsError> {
        let (n, _) = self.shape(a);
        if self.shape(col) != (n, 1) {
            return Err(shape_err(
                "mul_col",
                format!("column {:?} for {:?} input", self.shape(col), self.shape(a)),
            ));
        }
        let mut out = self.value(a).clone();
        let c = self.value(col).data().to_vec();
        for (r, s) in c.iter().enumerate() {
            out.row_mut(r).iter_mut().for_each(|x| *x *= s);
        }
        let rg = self.rg(a) || self.rg(col);
        Ok(self.push(out, Op::MulCol(a, col), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.rg(a);
        self.push(out, Op::LeakyRelu(a, slope), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat_cols", "no inputs".into()));
        };
        let rows = self.shape(first).0;
        let mut cols = 0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(shape_err(
                    "concat_cols",
                    format!("row counts {} and {}", rows, self.shape(p).0),
                ));
            }
            cols += self.shape(p).1;
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat_rows", "no inputs".into()));
        };
        let cols = self.shape(first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            if self.shape(p).1 != cols {
                return Err(shape_err(
                    "concat_rows",
                    format!("column counts {} and {}", cols, self.shape(p).1),
                ));
            }
            rows += self.shape(p).0;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    /// Sums each row into an `n x 1` column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let sums = (0..v.rows()).map(|r| v.row(r).iter().sum()).collect();
        let rg = self.rg(a);
        self.push(Tensor::column(sums), Op::RowSum(a), rg)
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<[usize]>) -> Result<Var, NumericsError> {
        let v = self.value(a);
        let (n, m) = v.shape();
        let mut out = Tensor::zeros(idx.len(), m);
        for (o, &i) in idx.iter().enumerate() {
            if i >= n {
                return Err(shape_err("gather_rows", format!("row {i} of {n}")));
            }
            out.row_mut(o).copy_from_slice(v.row(i));
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::GatherRows(a, idx), rg))
    }

    /// `out[idx[k]] += a[k]` into an `n_out`-row matrix.
    pub fn scatter_add_rows(
        &mut self,
        a: Var,
        idx: Rc<[usize]>,
        n_out: usize,
    ) -> Result<Var, NumericsError> {
        let v = self.value(a);
        if v.rows() != idx.len() {
            return Err(shape_err(
                "scatter_add_rows",
                format!("{} rows for {} indices", v.rows(), idx.len()),
            ));
        }
        let mut out = Tensor::zeros(n_out, v.cols());
        for (k, &i) in idx.iter().enumerate() {
            if i >= n_out {
                return Err(shape_err("scatter_add_rows", format!("row {i} of {n_out}")));
            }
            for (x, y) in out.row_mut(i).iter_mut().zip(v.row(k)) {
                *x += y;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::ScatterAddRows(a, idx), rg))
    }

    /// Softmax over each row restricted to entries where `mask` is true.
    /// Masked entries are exactly zero; a fully masked row is all zeros.
    pub fn masked_row_softmax(&mut self, a: Var, mask: Rc<[bool]>) -> Result<Var, NumericsError> {
        let v = self.value(a);
        if mask.len() != v.len() {
            return Err(shape_err(
                "masked_row_softmax",
                format!("mask of {} for {:?}", mask.len(), v.shape()),
            ));
        }
        let (n, m) = v.shape();
        let mut out = Tensor::zeros(n, m);
        for r in 0..n {
            let row = v.row(r);
            let keep = &mask[r * m..(r + 1) * m];
            let mx = row
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(&x, _)| x)
                .fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                continue;
            }
            let o = out.row_mut(r);
            let mut z = 0.0;
            for c in 0..m {
                if keep[c] {
                    o[c] = (row[c] - mx).exp();
                    z += o[c];
                }
            }
            o.iter_mut().for_each(|x| *x /= z);
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::MaskedRowSoftmax(a, mask), rg))
    }

    /// Softmax of an `e x 1` score column within groups sharing a segment id.
    pub fn segment_softmax(&mut self, a: Var, segments: Rc<[usize]>) -> Result<Var, NumericsError> {
        let v = self.value(a);
        if v.cols() != 1 || v.rows() != segments.len() {
            return Err(shape_err(
                "segment_softmax",
                format!("{:?} scores for {} segment ids", v.shape(), segments.len()),
            ));
        }
        let out = Tensor::column(segment_softmax(v.data(), &segments));
        let rg = self.rg(a);
        Ok(self.push(out, Op::SegmentSoftmax(a, segments), rg))
    }

    /// `out[dst[e]] += coef[e] * feats[src[e]]` into an `n_dst x f` matrix.
    pub fn edge_weighted_sum(
        &mut self,
        coef: Var,
        feats: Var,
        edges: Rc<EdgeIndex>,
        n_dst: usize,
    ) -> Result<Var, NumericsError> {
        let c = self.value(coef);
        let f = self.value(feats);
        if c.shape() != (edges.len(), 1) {
            return Err(shape_err(
                "edge_weighted_sum",
                format!("coefficients {:?} for {} edges", c.shape(), edges.len()),
            ));
        }
        let mut out = Tensor::zeros(n_dst, f.cols());
        for e in 0..edges.len() {
            let (s, d) = (edges.src[e], edges.dst[e]);
            if s >= f.rows() || d >= n_dst {
                return Err(shape_err(
                    "edge_weighted_sum",
                    format!("edge {s}->{d} outside {}x{n_dst}", f.rows()),
                ));
            }
            let w = c.data()[e];
            for (x, y) in out.row_mut(d).iter_mut().zip(f.row(s)) {
                *x += w * y;
            }
        }
        let rg = self.rg(coef) || self.rg(feats);
        Ok(self.push(out, Op::EdgeWeightedSum { coef, feats, edges }, rg))
    }

    /// Per-edge bilinear scores. `left` holds `levels` column blocks of width
    /// `right.cols()`; the score for edge `e` and level `r` is the dot product
    /// of block `r` of `left[src[e]]` with `right[dst[e]]`.
    pub fn bilinear_edge_scores(
        &mut self,
        left: Var,
        right: Var,
        edges: Rc<EdgeIndex>,
        levels: usize,
    ) -> Result<Var, NumericsError> {
        let l = self.value(left);
        let r = self.value(right);
        let width = r.cols();
        if l.cols() != width * levels {
            return Err(shape_err(
                "bilinear_edge_scores",
                format!(
                    "left {:?}, right {:?}, {levels} levels",
                    l.shape(),
                    r.shape()
                ),
            ));
        }
        let mut out = Tensor::zeros(edges.len(), levels);
        for e in 0..edges.len() {
            let (s, d) = (edges.src[e], edges.dst[e]);
            if s >= l.rows() || d >= r.rows() {
                return Err(shape_err(
                    "bilinear_edge_scores",
                    format!("edge {s}->{d} outside {}x{}", l.rows(), r.rows()),
                ));
            }
            let ls = l.row(s);
            let rd = r.row(d);
            for k in 0..levels {
                out.set(e, k, dot(&ls[k * width..(k + 1) * width], rd));
            }
        }
        let rg = self.rg(left) || self.rg(right);
        Ok(self.push(
            out,
            Op::BilinearEdgeScores {
                left,
                right,
                edges,
                levels,
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood of `targets` under the row softmax of
    /// `logits`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: Rc<[usize]>,
    ) -> Result<Var, NumericsError> {
        let v = self.value(logits);
        let (n, m) = v.shape();
        if n != targets.len() || n == 0 {
            return Err(shape_err(
                "cross_entropy",
                format!("{n} rows for {} targets", targets.len()),
            ));
        }
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= m {
                return Err(shape_err(
                    "cross_entropy",
                    format!("target {t} of {m} classes"),
                ));
            }
            let row = v.row(r);
            total += log_sum_exp(row) - row[t];
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(total / n as f64),
            Op::CrossEntropy { logits, targets },
            rg,
        ))
    }

    /// Sign pattern of every rectifier input on the tape; two evaluations with
    /// different patterns straddle a kink.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut pattern = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(a) | Op::LeakyRelu(a, _) = node.op {
                pattern.extend(self.value(a).data().iter().map(|&x| x > 0.0));
            }
        }
        pattern
    }

    /// Back-propagates from a `1 x 1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(NumericsError::NonScalarLoss {
                rows: shape.0,
                cols: shape.1,
            });
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(&node.op, &node.value, &g, &mut grads);
            }
            // Only leaf gradients are reported; intermediate ones are freed.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut Tensor> {
        if !self.rg(v) {
            return None;
        }
        let (r, c) = self.shape(v);
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c)))
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.slot(grads, *a) {
                    gemm(Trans::N, g, Trans::T, vb, ga, 1.0);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm(Trans::T, va, Trans::N, g, gb, 1.0);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.slot(grads, v) {
                        gv.axpy(1.0, g);
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.axpy(1.0, g);
                }
                if let Some(gb) = self.slot(grads, *bias) {
                    for r in 0..g.rows() {
                        for (x, y) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.slot(grads, *a) {
                    for ((x, gi), bi) in ga.data_mut().iter_mut().zip(g.data()).zip(vb.data()) {
                        *x += gi * bi;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((x, gi), ai) in gb.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *x += gi * ai;
                    }
                }
            }
            Op::MulCol(a, col) => {
                let (va, vc) = (self.value(*a), self.value(*col));
                if let Some(ga) = self.slot(grads, *a) {
                    for r in 0..g.rows() {
                        let s = vc.data()[r];
                        for (x, y) in ga.row_mut(r).iter_mut().zip(g.row(r)) {
                            *x += s * y;
                        }
                    }
                }
                if let Some(gc) = self.slot(grads, *col) {
                    for r in 0..g.rows() {
                        gc.data_mut()[r] += dot(g.row(r), va.row(r));
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.axpy(*s, g);
                }
            }
            Op::Relu(a) => {
                let va = self.value(*a);
                if let Some(ga) = self.slot(grads, *a) {
                    for ((x, gi), xi) in ga.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        if *xi > 0.0 {
                            *x += gi;
                        }
                    }
                }
            }
            Op::LeakyRelu(a, slope) => {
                let va = self.value(*a);
                if let Some(ga) = self.slot(grads, *a) {
                    for ((x, gi), xi) in ga.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *x += if *xi > 0.0 { *gi } else { slope * gi };
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((x, gi), yi) in ga.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *x += gi * yi * (1.0 - yi);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if let Some(gp) = self.slot(grads, p) {
                        for r in 0..g.rows() {
                            for (x, y) in gp.row_mut(r).iter_mut().zip(&g.row(r)[off..off + w]) {
                                *x += y;
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(gp) = self.slot(grads, p) {
                        for (x, y) in gp.data_mut().iter_mut().zip(&g.data()[off..off + len]) {
                            *x += y;
                        }
                    }
                    off += len;
                }
            }
            Op::SumAll(a) => {
                let s = g.data()[0];
                if let Some(ga) = self.slot(grads, *a) {
                    ga.data_mut().iter_mut().for_each(|x| *x += s);
                }
            }
            Op::RowSum(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for r in 0..ga.rows() {
                        let s = g.data()[r];
                        ga.row_mut(r).iter_mut().for_each(|x| *x += s);
                    }
                }
            }
            Op::GatherRows(a, idx) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for (o, &i) in idx.iter().enumerate() {
                        for (x, y) in ga.row_mut(i).iter_mut().zip(g.row(o)) {
                            *x += y;
                        }
                    }
                }
            }
            Op::ScatterAddRows(a, idx) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for (k, &i) in idx.iter().enumerate() {
                        for (x, y) in ga.row_mut(k).iter_mut().zip(g.row(i)) {
                            *x += y;
                        }
                    }
                }
            }
            Op::MaskedRowSoftmax(a, mask) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let m = out.cols();
                    for r in 0..out.rows() {
                        let y = out.row(r);
                        let gr = g.row(r);
                        let inner = dot(y, gr);
                        let keep = &mask[r * m..(r + 1) * m];
                        for c in 0..m {
                            if keep[c] {
                                ga.row_mut(r)[c] += y[c] * (gr[c] - inner);
                            }
                        }
                    }
                }
            }
            Op::SegmentSoftmax(a, segments) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let y = out.data();
                    let nseg = segments.iter().copied().max().map_or(0, |m| m + 1);
                    let mut inner = vec![0.0; nseg];
                    for (e, &s) in segments.iter().enumerate() {
                        inner[s] += y[e] * g.data()[e];
                    }
                    for (e, &s) in segments.iter().enumerate() {
                        ga.data_mut()[e] += y[e] * (g.data()[e] - inner[s]);
                    }
                }
            }
            Op::EdgeWeightedSum { coef, feats, edges } => {
                let (vc, vf) = (self.value(*coef), self.value(*feats));
                if let Some(gc) = self.slot(grads, *coef) {
                    for e in 0..edges.len() {
                        gc.data_mut()[e] += dot(g.row(edges.dst[e]), vf.row(edges.src[e]));
                    }
                }
                if let Some(gf) = self.slot(grads, *feats) {
                    for e in 0..edges.len() {
                        let w = vc.data()[e];
                        for (x, y) in gf.row_mut(edges.src[e]).iter_mut().zip(g.row(edges.dst[e])) {
                            *x += w * y;
                        }
                    }
                }
            }
            Op::BilinearEdgeScores {
                left,
                right,
                edges,
                levels,
            } => {
                let (vl, vr) = (self.value(*left), self.value(*right));
                let width = vr.cols();
                if let Some(gl) = self.slot(grads, *left) {
                    for e in 0..edges.len() {
                        let rd = vr.row(edges.dst[e]);
                        let row = gl.row_mut(edges.src[e]);
                        for k in 0..*levels {
                            let s = g.get(e, k);
                            for (x, y) in row[k * width..(k + 1) * width].iter_mut().zip(rd) {
                                *x += s * y;
                            }
                        }
                    }
                }
                if let Some(gr) = self.slot(grads, *right) {
                    for e in 0..edges.len() {
                        let ls = vl.row(edges.src[e]);
                        let row = gr.row_mut(edges.dst[e]);
                        for k in 0..*levels {
                            let s = g.get(e, k);
                            for (x, y) in row.iter_mut().zip(&ls[k * width..(k + 1) * width]) {
                                *x += s * y;
                            }
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets } => {
                let v = self.value(*logits);
                let scale = g.data()[0] / targets.len() as f64;
                if let Some(gl) = self.slot(grads, *logits) {
                    for (r, &t) in targets.iter().enumerate() {
                        let row = v.row(r);
                        let lse = log_sum_exp(row);
                        let gr = gl.row_mut(r);
                        for c in 0..row.len() {
                            let p = (row[c] - lse).exp();
                            gr[c] += scale * (p - if c == t { 1.0 } else { 0.0 });
                        }
                    }
                }
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// Softmax of a full row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(row);
    row.iter().map(|x| (x - lse).exp()).collect()
}

/// Softmax within segments; entries sharing a segment id sum to one.
pub fn segment_softmax(scores: &[f64], segments: &[usize]) -> Vec<f64> {
    let nseg = segments.iter().copied().max().map_or(0, |m| m + 1);
    let mut mx = vec![f64::NEG_INFINITY; nseg];
    for (&x, &s) in scores.iter().zip(segments) {
        mx[s] = mx[s].max(x);
    }
    let mut out: Vec<f64> = scores
        .iter()
        .zip(segments)
        .map(|(&x, &s)| (x - mx[s]).exp())
        .collect();
    let mut z = vec![0.0; nseg];
    for (&y, &s) in out.iter().zip(segments) {
        z[s] += y;
    }
    for (y, &s) in out.iter_mut().zip(segments) {
        *y /= z[s];
    }
    out
}
