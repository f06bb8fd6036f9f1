//! Operation tape and reverse sweep.
//!
//! Every op appends one node holding its forward value. [`Tape::backward`]
//! walks the nodes in reverse insertion order, which is a topological order
//! by construction, and visits each node once.

use std::rc::Rc;

use crate::tensor::{matmul_into, matmul_nt_into, matmul_tn_into};
use crate::{AutodiffError, ParamId, ParamStore, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    ParamRows(ParamId, Vec<usize>),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRows(Var, Var),
    MulCols(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SelectRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Log(Var),
    ClampMin(Var, f64),
    SoftmaxRows(Var),
    MaxPoolRows(Var, Vec<usize>),
    LayerNormRows(Var, Vec<f64>),
    CrossEntropy(Var, Vec<usize>, Tensor),
    SumAll(Var),
    Pick(Var, usize),
    RelationGather(Var, Rc<Vec<usize>>),
    RelationScatter(Var, Rc<Vec<usize>>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation over parameters borrowed from a
/// [`ParamStore`].
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

/// Result of a reverse sweep: gradients of every node and every touched
/// parameter.
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    /// Gradient of the output with respect to `var`, or `None` if `var`
    /// does not influence the output.
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.nodes.get(var.0).and_then(Option::as_ref)
    }

    pub fn params(&self) -> &[(ParamId, Tensor)] {
        &self.params
    }

    /// Adds parameter gradients into `store`.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (id, g) in &self.params {
            store.accumulate_grad(*id, g.values());
        }
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
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

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.constant(Tensor::zeros(rows, cols))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.params.value(id).clone();
        self.push(value, Op::Param(id))
    }

    /// Gathers rows of a parameter matrix (embedding lookup).
    pub fn param_rows(&mut self, id: ParamId, rows: &[usize]) -> Result<Var, AutodiffError> {
        let table = self.params.value(id);
        let cols = table.cols();
        let mut values = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= table.rows() {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "param_rows",
                    index: r,
                    len: table.rows(),
                });
            }
            values.extend_from_slice(table.row(r));
        }
        let value = Tensor::from_vec(rows.len(), cols, values)?;
        Ok(self.push(value, Op::ParamRows(id, rows.to_vec())))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(mismatch("matmul_nt", av, bv));
        }
        let mut out = Tensor::zeros(av.rows(), bv.rows());
        matmul_nt_into(
            av.values(),
            bv.values(),
            out.values_mut(),
            av.rows(),
            av.cols(),
            bv.rows(),
        );
        Ok(self.push(out, Op::MatMulNt(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    fn zip_same(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch(op, av, bv));
        }
        let values = av
            .values()
            .iter()
            .zip(bv.values())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::from_vec(av.rows(), av.cols(), values)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let value = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let value = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let value = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(mismatch("add_row", av, rv));
        }
        let mut out = av.clone();
        let cols = av.cols();
        for (i, v) in out.values_mut().iter_mut().enumerate() {
            *v += rv.values()[i % cols];
        }
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// Scales row `i` of `a` by `s[i]`, where `s` is `n x 1`.
    pub fn mul_rows(&mut self, a: Var, s: Var) -> Result<Var, AutodiffError> {
        let (av, sv) = (self.value(a), self.value(s));
        if sv.cols() != 1 || sv.rows() != av.rows() {
            return Err(mismatch("mul_rows", av, sv));
        }
        let mut out = av.clone();
        let cols = av.cols();
        for (i, v) in out.values_mut().iter_mut().enumerate() {
            *v *= sv.values()[i / cols];
        }
        Ok(self.push(out, Op::MulRows(a, s)))
    }

    /// Scales column `j` of `a` by `s[j]`, where `s` is `1 x c`.
    pub fn mul_cols(&mut self, a: Var, s: Var) -> Result<Var, AutodiffError> {
        let (av, sv) = (self.value(a), self.value(s));
        if sv.rows() != 1 || sv.cols() != av.cols() {
            return Err(mismatch("mul_cols", av, sv));
        }
        let mut out = av.clone();
        let cols = av.cols();
        for (i, v) in out.values_mut().iter_mut().enumerate() {
            *v *= sv.values()[i % cols];
        }
        Ok(self.push(out, Op::MulCols(a, s)))
    }

    /// Multiplies every entry of `a` by the `1 x 1` tensor `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var, AutodiffError> {
        let (av, sv) = (self.value(a), self.value(s));
        if sv.len() != 1 {
            return Err(mismatch("mul_scalar", av, sv));
        }
        let k = sv.scalar();
        let values = av.values().iter().map(|x| x * k).collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), values)?;
        Ok(self.push(out, Op::MulScalar(a, s)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let av = self.value(a);
        let values = av.values().iter().map(|x| x * k).collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), values).expect("same shape");
        self.push(out, Op::Scale(a, k))
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Var {
        let av = self.value(a);
        let values = av.values().iter().map(|x| x + k).collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), values).expect("same shape");
        self.push(out, Op::AddConst(a))
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_const(neg, 1.0)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows {
                return Err(mismatch("concat_cols", self.value(parts[0]), pv));
            }
            total += pv.cols();
        }
        let mut out = Tensor::zeros(rows, total);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            for r in 0..rows {
                let dst = r * total + offset;
                out.values_mut()[dst..dst + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let cols = self.value(parts[0]).cols();
        let mut values = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(mismatch("concat_rows", self.value(parts[0]), pv));
            }
            values.extend_from_slice(pv.values());
            rows += pv.rows();
        }
        let out = Tensor::from_vec(rows, cols, values)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Rows `[start, end)` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if start > end || end > av.rows() {
            return Err(AutodiffError::IndexOutOfRange {
                op: "slice_rows",
                index: end,
                len: av.rows(),
            });
        }
        let cols = av.cols();
        let values = av.values()[start * cols..end * cols].to_vec();
        let out = Tensor::from_vec(end - start, cols, values)?;
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    /// Rows of `a` at `rows`, in that order; indices may repeat.
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        let cols = av.cols();
        let mut values = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= av.rows() {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "select_rows",
                    index: r,
                    len: av.rows(),
                });
            }
            values.extend_from_slice(av.row(r));
        }
        let out = Tensor::from_vec(rows.len(), cols, values)?;
        Ok(self.push(out, Op::SelectRows(a, rows.to_vec())))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Result<Var, AutodiffError> {
        self.slice_rows(a, r, r + 1)
    }

    /// Columns `[start, end)` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if start > end || end > av.cols() {
            return Err(AutodiffError::IndexOutOfRange {
                op: "slice_cols",
                index: end,
                len: av.cols(),
            });
        }
        let mut values = Vec::with_capacity(av.rows() * (end - start));
        for r in 0..av.rows() {
            values.extend_from_slice(&av.row(r)[start..end]);
        }
        let out = Tensor::from_vec(av.rows(), end - start, values)?;
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    /// Splits `a` column-wise into pieces of the given widths.
    pub fn split_cols(&mut self, a: Var, widths: &[usize]) -> Result<Vec<Var>, AutodiffError> {
        let mut out = Vec::with_capacity(widths.len());
        let mut start = 0;
        for &w in widths {
            out.push(self.slice_cols(a, start, start + w)?);
            start += w;
        }
        Ok(out)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let av = self.value(a);
        let values = av.values().iter().map(|x| f(*x)).collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), values).expect("same shape");
        self.push(out, op)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, f64::ln, Op::Log(a))
    }

    /// `max(a, floor)` elementwise; gradient passes only where `a > floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        self.map(a, |x| x.max(floor), Op::ClampMin(a, floor))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = av.clone();
        let cols = av.cols();
        if cols > 0 {
            for row in out.values_mut().chunks_mut(cols) {
                softmax_in_place(row);
            }
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Elementwise maximum over the rows of `a` (pooling over a sequence).
    pub fn max_pool_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if av.rows() == 0 {
            return Err(AutodiffError::EmptyInput("max_pool_rows"));
        }
        let cols = av.cols();
        let mut best = av.row(0).to_vec();
        let mut arg = vec![0usize; cols];
        for r in 1..av.rows() {
            for (c, v) in av.row(r).iter().enumerate() {
                if *v > best[c] {
                    best[c] = *v;
                    arg[c] = r;
                }
            }
        }
        Ok(self.push(Tensor::row_vector(best), Op::MaxPoolRows(a, arg)))
    }

    /// Per-row normalization to zero mean and unit variance.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let av = self.value(a);
        let cols = av.cols();
        let mut out = av.clone();
        let mut inv_std = Vec::with_capacity(av.rows());
        for row in out.values_mut().chunks_mut(cols.max(1)) {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(out, Op::LayerNormRows(a, inv_std))
    }

    /// Summed softmax cross-entropy of each row of `logits` against its
    /// target column. Returns a `1 x 1` tensor.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, AutodiffError> {
        let lv = self.value(logits);
        if targets.len() != lv.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "cross_entropy",
                left: lv.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let cols = lv.cols();
        let mut probs = lv.clone();
        let mut loss = 0.0;
        for (r, row) in probs.values_mut().chunks_mut(cols).enumerate() {
            let t = targets[r];
            if t >= cols {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: t,
                    len: cols,
                });
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
            softmax_in_place(row);
        }
        Ok(self.push(
            Tensor::row_vector(vec![loss]),
            Op::CrossEntropy(logits, targets.to_vec(), probs),
        ))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).values().iter().sum();
        self.push(Tensor::row_vector(vec![s]), Op::SumAll(a))
    }

    /// Sums a list of `1 x 1` vars.
    pub fn sum_scalars(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        if parts.is_empty() {
            return Ok(self.zeros(1, 1));
        }
        let stacked = self.concat_rows(parts)?;
        Ok(self.sum_all(stacked))
    }

    /// Single entry `(r, c)` of `a` as a `1 x 1` tensor.
    pub fn pick(&mut self, a: Var, r: usize, c: usize) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if r >= av.rows() || c >= av.cols() {
            return Err(AutodiffError::IndexOutOfRange {
                op: "pick",
                index: r * av.cols() + c,
                len: av.len(),
            });
        }
        let flat = r * av.cols() + c;
        let v = av.values()[flat];
        Ok(self.push(Tensor::row_vector(vec![v]), Op::Pick(a, flat)))
    }

    /// `out[i][j] = table[i][relations[i][j]]` for an `n x r` table and a
    /// row-major `n x m` index matrix.
    pub fn relation_gather(
        &mut self,
        table: Var,
        relations: Rc<Vec<usize>>,
        m: usize,
    ) -> Result<Var, AutodiffError> {
        let tv = self.value(table);
        let n = tv.rows();
        if relations.len() != n * m {
            return Err(AutodiffError::ShapeMismatch {
                op: "relation_gather",
                left: tv.shape().to_vec(),
                right: vec![relations.len()],
            });
        }
        let mut out = Tensor::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                let r = relations[i * m + j];
                if r >= tv.cols() {
                    return Err(AutodiffError::IndexOutOfRange {
                        op: "relation_gather",
                        index: r,
                        len: tv.cols(),
                    });
                }
                out.set(i, j, tv.get(i, r));
            }
        }
        Ok(self.push(out, Op::RelationGather(table, relations)))
    }

    /// Adjoint of [`Tape::relation_gather`]:
    /// `out[i][r] = sum_j a[i][j] * [relations[i][j] == r]`.
    pub fn relation_scatter(
        &mut self,
        a: Var,
        relations: Rc<Vec<usize>>,
        num_relations: usize,
    ) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if relations.len() != av.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "relation_scatter",
                left: av.shape().to_vec(),
                right: vec![relations.len()],
            });
        }
        let (n, m) = (av.rows(), av.cols());
        let mut out = Tensor::zeros(n, num_relations);
        for i in 0..n {
            for j in 0..m {
                let r = relations[i * m + j];
                if r >= num_relations {
                    return Err(AutodiffError::IndexOutOfRange {
                        op: "relation_scatter",
                        index: r,
                        len: num_relations,
                    });
                }
                let cur = out.get(i, r);
                out.set(i, r, cur + av.get(i, j));
            }
        }
        Ok(self.push(out, Op::RelationScatter(a, relations)))
    }

    /// Reverse sweep from a `1 x 1` output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(
            self.value(output).len(),
            1,
            "backward requires a scalar output"
        );
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(Tensor::filled(1, 1, 1.0));
        let mut param_grads: Vec<Option<Tensor>> = vec![None; self.params.len()];

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads, &mut param_grads);
            grads[idx] = Some(g);
        }

        let params = param_grads
            .into_iter()
            .enumerate()
            .filter_map(|(i, g)| g.map(|g| (ParamId(i), g)))
            .collect();
        Gradients {
            nodes: grads,
            params,
        }
    }

    fn propagate(
        &self,
        node: &Node,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        param_grads: &mut [Option<Tensor>],
    ) {
        let val = |v: Var| &self.nodes[v.0].value;
        let gv = g.values();
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => {
                let slot = param_grads[id.0]
                    .get_or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
                add_into(slot.values_mut(), gv);
            }
            Op::ParamRows(id, rows) => {
                let table = self.params.value(*id);
                let cols = table.cols();
                let slot = param_grads[id.0]
                    .get_or_insert_with(|| Tensor::zeros(table.rows(), cols));
                for (k, &r) in rows.iter().enumerate() {
                    let dst = &mut slot.values_mut()[r * cols..(r + 1) * cols];
                    add_into(dst, &gv[k * cols..(k + 1) * cols]);
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                let ga = grad_slot(grads, *a, n, k);
                matmul_nt_into(gv, bv.values(), ga.values_mut(), n, m, k);
                let gb = grad_slot(grads, *b, k, m);
                matmul_tn_into(av.values(), gv, gb.values_mut(), n, k, m);
            }
            Op::MatMulNt(a, b) => {
                // out = a b^T, a: n x k, b: m x k
                let (av, bv) = (val(*a), val(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.rows());
                let ga = grad_slot(grads, *a, n, k);
                matmul_into(gv, bv.values(), ga.values_mut(), n, m, k);
                let gb = grad_slot(grads, *b, m, k);
                matmul_tn_into(gv, av.values(), gb.values_mut(), n, m, k);
            }
            Op::Transpose(a) => {
                let gt = g.transpose();
                let ga = grad_slot(grads, *a, gt.rows(), gt.cols());
                add_into(ga.values_mut(), gt.values());
            }
            Op::Add(a, b) => {
                add_into(grad_slot(grads, *a, g.rows(), g.cols()).values_mut(), gv);
                add_into(grad_slot(grads, *b, g.rows(), g.cols()).values_mut(), gv);
            }
            Op::Sub(a, b) => {
                add_into(grad_slot(grads, *a, g.rows(), g.cols()).values_mut(), gv);
                let gb = grad_slot(grads, *b, g.rows(), g.cols());
                for (d, x) in gb.values_mut().iter_mut().zip(gv) {
                    *d -= x;
                }
            }
            Op::AddRow(a, row) => {
                add_into(grad_slot(grads, *a, g.rows(), g.cols()).values_mut(), gv);
                let cols = g.cols();
                let gr = grad_slot(grads, *row, 1, cols);
                for (i, x) in gv.iter().enumerate() {
                    gr.values_mut()[i % cols] += x;
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let ga = grad_slot(grads, *a, g.rows(), g.cols());
                for ((d, x), y) in ga.values_mut().iter_mut().zip(gv).zip(bv.values()) {
                    *d += x * y;
                }
                let gb = grad_slot(grads, *b, g.rows(), g.cols());
                for ((d, x), y) in gb.values_mut().iter_mut().zip(gv).zip(av.values()) {
                    *d += x * y;
                }
            }
            Op::MulRows(a, s) => {
                let (av, sv) = (val(*a), val(*s));
                let cols = av.cols();
                let ga = grad_slot(grads, *a, av.rows(), cols);
                for (i, d) in ga.values_mut().iter_mut().enumerate() {
                    *d += gv[i] * sv.values()[i / cols];
                }
                let gs = grad_slot(grads, *s, av.rows(), 1);
                for (i, x) in gv.iter().enumerate() {
                    gs.values_mut()[i / cols] += x * av.values()[i];
                }
            }
            Op::MulCols(a, s) => {
                let (av, sv) = (val(*a), val(*s));
                let cols = av.cols();
                let ga = grad_slot(grads, *a, av.rows(), cols);
                for (i, d) in ga.values_mut().iter_mut().enumerate() {
                    *d += gv[i] * sv.values()[i % cols];
                }
                let gs = grad_slot(grads, *s, 1, cols);
                for (i, x) in gv.iter().enumerate() {
                    gs.values_mut()[i % cols] += x * av.values()[i];
                }
            }
            Op::MulScalar(a, s) => {
                let (av, sv) = (val(*a), val(*s));
                let k = sv.scalar();
                let ga = grad_slot(grads, *a, av.rows(), av.cols());
                for (d, x) in ga.values_mut().iter_mut().zip(gv) {
                    *d += x * k;
                }
                let dot: f64 = gv.iter().zip(av.values()).map(|(x, y)| x * y).sum();
                grad_slot(grads, *s, 1, 1).values_mut()[0] += dot;
            }
            Op::Scale(a, k) => {
                let ga = grad_slot(grads, *a, g.rows(), g.cols());
                for (d, x) in ga.values_mut().iter_mut().zip(gv) {
                    *d += x * k;
                }
            }
            Op::AddConst(a) => {
                add_into(grad_slot(grads, *a, g.rows(), g.cols()).values_mut(), gv);
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for p in parts {
                    let w = val(*p).cols();
                    let gp = grad_slot(grads, *p, rows, w);
                    for r in 0..rows {
                        let src = &gv[r * total + offset..r * total + offset + w];
                        add_into(&mut gp.values_mut()[r * w..(r + 1) * w], src);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let pv = val(*p);
                    let len = pv.len();
                    let gp = grad_slot(grads, *p, pv.rows(), pv.cols());
                    add_into(gp.values_mut(), &gv[offset..offset + len]);
                    offset += len;
                }
            }
            Op::SliceRows(a, start) => {
                let av = val(*a);
                let cols = av.cols();
                let ga = grad_slot(grads, *a, av.rows(), cols);
                let dst = &mut ga.values_mut()[start * cols..start * cols + gv.len()];
                add_into(dst, gv);
            }
            Op::SelectRows(a, rows) => {
                let av = val(*a);
                let cols = av.cols();
                let ga = grad_slot(grads, *a, av.rows(), cols);
                for (k, &r) in rows.iter().enumerate() {
                    add_into(&mut ga.values_mut()[r * cols..(r + 1) * cols], &gv[k * cols..(k + 1) * cols]);
                }
            }
            Op::SliceCols(a, start) => {
                let av = val(*a);
                let (rows, cols, w) = (av.rows(), av.cols(), g.cols());
                let ga = grad_slot(grads, *a, rows, cols);
                for r in 0..rows {
                    let dst = &mut ga.values_mut()[r * cols + start..r * cols + start + w];
                    add_into(dst, &gv[r * w..(r + 1) * w]);
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.values();
                let ga = grad_slot(grads, *a, g.rows(), g.cols());
                for ((d, x), y) in ga.values_mut().iter_mut().zip(gv).zip(y) {
                    *d += x * y * (1.0 - y);
                }
            }
            Op::Tanh(a) => {
                let y = node.value.values();
                let ga = grad_slot(grads, *a, g.rows(), g.cols());
                for ((d, x), y) in ga.values_mut().iter_mut().zip(gv).zip(y) {
                    *d += x * (1.0 - y * y);
                }
            }
            Op::Relu(a) => {
                let av = val(*a);
                let ga = grad_slot(grads, *a, g.rows(), g.cols());
                for ((d, x), inp) in ga.values_mut().iter_mut().zip(gv).zip(av.values()) {
                    if *inp > 0.0 {
                        *d += x;
                    }
                }
            }
            Op::Log(a) => {
                let av = val(*a);
                let ga = grad_slot(grads, *a, g.rows(), g.cols());
                for ((d, x), inp) in ga.values_mut().iter_mut().zip(gv).zip(av.values()) {
                    *d += x / inp;
                }
            }
            Op::ClampMin(a, floor) => {
                let av = val(*a);
                let ga = grad_slot(grads, *a, g.rows(), g.cols());
                for ((d, x), inp) in ga.values_mut().iter_mut().zip(gv).zip(av.values()) {
                    if *inp > *floor {
                        *d += x;
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let cols = y.cols();
                let ga = grad_slot(grads, *a, y.rows(), cols);
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = &gv[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    let dst = &mut ga.values_mut()[r * cols..(r + 1) * cols];
                    for ((d, yv), gq) in dst.iter_mut().zip(yr).zip(gr) {
                        *d += yv * (gq - dot);
                    }
                }
            }
            Op::MaxPoolRows(a, arg) => {
                let av = val(*a);
                let cols = av.cols();
                let ga = grad_slot(grads, *a, av.rows(), cols);
                for (c, &r) in arg.iter().enumerate() {
                    ga.values_mut()[r * cols + c] += gv[c];
                }
            }
            Op::LayerNormRows(a, inv_std) => {
                let y = &node.value;
                let cols = y.cols();
                let n = cols as f64;
                let ga = grad_slot(grads, *a, y.rows(), cols);
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = &gv[r * cols..(r + 1) * cols];
                    let mean_g = gr.iter().sum::<f64>() / n;
                    let mean_gy = gr.iter().zip(yr).map(|(p, q)| p * q).sum::<f64>() / n;
                    let dst = &mut ga.values_mut()[r * cols..(r + 1) * cols];
                    for ((d, gq), yv) in dst.iter_mut().zip(gr).zip(yr) {
                        *d += inv_std[r] * (gq - mean_g - yv * mean_gy);
                    }
                }
            }
            Op::CrossEntropy(logits, targets, probs) => {
                let up = gv[0];
                let cols = probs.cols();
                let ga = grad_slot(grads, *logits, probs.rows(), cols);
                for (r, &t) in targets.iter().enumerate() {
                    let pr = probs.row(r);
                    let dst = &mut ga.values_mut()[r * cols..(r + 1) * cols];
                    for (c, (d, p)) in dst.iter_mut().zip(pr).enumerate() {
                        let onehot = if c == t { 1.0 } else { 0.0 };
                        *d += up * (p - onehot);
                    }
                }
            }
            Op::SumAll(a) => {
                let av = val(*a);
                let up = gv[0];
                let ga = grad_slot(grads, *a, av.rows(), av.cols());
                ga.values_mut().iter_mut().for_each(|d| *d += up);
            }
            Op::Pick(a, flat) => {
                let av = val(*a);
                let ga = grad_slot(grads, *a, av.rows(), av.cols());
                ga.values_mut()[*flat] += gv[0];
            }
            Op::RelationGather(table, relations) => {
                let tv = val(*table);
                let (n, r_count) = (tv.rows(), tv.cols());
                let m = g.cols();
                let gt = grad_slot(grads, *table, n, r_count);
                for i in 0..n {
                    for j in 0..m {
                        let r = relations[i * m + j];
                        gt.values_mut()[i * r_count + r] += gv[i * m + j];
                    }
                }
            }
            Op::RelationScatter(a, relations) => {
                let av = val(*a);
                let (n, m) = (av.rows(), av.cols());
                let r_count = g.cols();
                let ga = grad_slot(grads, *a, n, m);
                for i in 0..n {
                    for j in 0..m {
                        let r = relations[i * m + j];
                        ga.values_mut()[i * m + j] += gv[i * r_count + r];
                    }
                }
            }
        }
    }
}

fn grad_slot(grads: &mut [Option<Tensor>], v: Var, rows: usize, cols: usize) -> &mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(rows, cols))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Plain softmax of a slice, used outside any tape.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    softmax_in_place(&mut out);
    out
}

/// Logistic function, numerically stable for large `|x|`.
pub fn logistic(x: f64) -> f64 {
    sigmoid(x)
}
