//! Reverse-mode differentiation over a fixed set of matrix primitives.
//!
//! Every operation appends one record to the tape. Records reference earlier
//! records only, so creation order is a topological order and the backward
//! pass is a single reverse sweep.

use std::sync::Arc;

use super::tensor::gemm;
use super::{NumError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Element-wise maps with closed-form derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MapKind {
    Relu,
    Sigmoid,
    Square,
    Scale(f64),
    Shift(f64),
    /// `min(x, c)`
    ClampMax(f64),
}

#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add { a: Var, b: Var },
    /// `a + 1ᵀ row` — broadcast a `1 × c` row over every row of `a`.
    AddRow { a: Var, row: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Div { a: Var, b: Var },
    /// Column-wise concatenation `[a, b]`.
    Concat { a: Var, b: Var },
    Map { a: Var, kind: MapKind },
    Exp { a: Var },
    SumAll { a: Var },
    /// Mean over rows, `r × c → 1 × c`.
    MeanRows { a: Var },
    RowNormalize { a: Var },
    ColNormalize { a: Var },
    RowLogNormalize { a: Var },
    ColLogNormalize { a: Var },
    Dot { a: Var, b: Var },
    Norm { a: Var },
    Transpose { a: Var },
    /// Rows `start .. start + len` of `a`.
    RowSlice { a: Var, start: usize },
    /// Row-wise concatenation of equally wide parts.
    VStack { parts: Vec<Var> },
    /// Row `i` of the output is the sum of rows `adj[i]` of `a`; `adj` must be symmetric.
    NeighborSum { a: Var, adj: Arc<Vec<Vec<usize>>> },
}

enum Value<'p> {
    Owned(Vec<f64>),
    Borrowed(&'p [f64]),
}

impl Value<'_> {
    fn as_slice(&self) -> &[f64] {
        match self {
            Value::Owned(v) => v,
            Value::Borrowed(v) => v,
        }
    }
}

struct Record<'p> {
    value: Value<'p>,
    dims: (usize, usize),
    op: Op,
    needs_grad: bool,
}

/// Computation record for one forward pass.
///
/// Leaves may borrow their storage (`'p`) so model parameters are not copied
/// per evaluation.
pub struct Tape<'p> {
    records: Vec<Record<'p>>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self {
            records: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, dims: (usize, usize), op: Op, needs_grad: bool) -> Var {
        self.records.push(Record {
            value: Value::Owned(value),
            dims,
            op,
            needs_grad,
        });
        Var(self.records.len() - 1)
    }

    /// Record a leaf that owns its values. Gradients are tracked when the
    /// tensor's `requires_grad` flag is set.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let dims = t.dims2();
        let rg = t.requires_grad;
        self.push(t.into_values(), dims, Op::Leaf, rg)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let dims = t.dims2();
        self.push(t.into_values(), dims, Op::Leaf, false)
    }

    /// Record a leaf that borrows its values from `t`.
    pub fn leaf_ref(&mut self, t: &'p Tensor) -> Var {
        self.records.push(Record {
            value: Value::Borrowed(t.values()),
            dims: t.dims2(),
            op: Op::Leaf,
            needs_grad: t.requires_grad,
        });
        Var(self.records.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.records[v.0].value.as_slice()
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        self.records[v.0].dims
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let (r, c) = self.dims(v);
        Tensor::matrix(r, c, self.value(v).to_vec()).expect("tape values are finite")
    }

    pub fn op(&self, v: Var) -> &Op {
        &self.records[v.0].op
    }

    fn ng(&self, v: Var) -> bool {
        self.records[v.0].needs_grad
    }

    fn check_finite(values: &[f64], op: &str) -> Result<(), NumError> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(NumError::NonFinite {
                context: op.to_string(),
            })
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<(usize, usize), NumError> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(NumError::ShapeMismatch {
                op,
                left: vec![da.0, da.1],
                right: vec![db.0, db.1],
            });
        }
        Ok(da)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) · op(b)` where `op` transposes when the flag is set.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var, NumError> {
        let (da, db) = (self.dims(a), self.dims(b));
        let (m, k) = if ta { (da.1, da.0) } else { da };
        let (k2, n) = if tb { (db.1, db.0) } else { db };
        if k != k2 {
            return Err(NumError::ShapeMismatch {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(self.value(a), da, ta, self.value(b), db, tb, 0.0, &mut out);
        Self::check_finite(&out, "matmul")?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, (m, n), Op::MatMul { a, b, ta, tb }, ng))
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, NumError> {
        let dims = self.same_shape(a, b, name)?;
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Self::check_finite(&out, name)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, dims, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip_with(a, b, "add", Op::Add { a, b }, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip_with(a, b, "sub", Op::Sub { a, b }, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip_with(a, b, "mul", Op::Mul { a, b }, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip_with(a, b, "div", Op::Div { a, b }, |x, y| x / y)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumError> {
        let (r, c) = self.dims(a);
        let dr = self.dims(row);
        if dr != (1, c) {
            return Err(NumError::ShapeMismatch {
                op: "add_row",
                left: vec![r, c],
                right: vec![dr.0, dr.1],
            });
        }
        let bias = self.value(row);
        let mut out = self.value(a).to_vec();
        for chunk in out.chunks_mut(c) {
            for (o, b) in chunk.iter_mut().zip(bias) {
                *o += b;
            }
        }
        Self::check_finite(&out, "add_row")?;
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(out, (r, c), Op::AddRow { a, row }, ng))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if ra != rb {
            return Err(NumError::ShapeMismatch {
                op: "concat",
                left: vec![ra, ca],
                right: vec![rb, cb],
            });
        }
        let mut out = Vec::with_capacity(ra * (ca + cb));
        let (va, vb) = (self.value(a), self.value(b));
        for i in 0..ra {
            out.extend_from_slice(&va[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&vb[i * cb..(i + 1) * cb]);
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, (ra, ca + cb), Op::Concat { a, b }, ng))
    }

    pub fn map(&mut self, a: Var, kind: MapKind) -> Result<Var, NumError> {
        let f: Box<dyn Fn(f64) -> f64> = match kind {
            MapKind::Relu => Box::new(|x| x.max(0.0)),
            MapKind::Sigmoid => Box::new(|x| 1.0 / (1.0 + (-x).exp())),
            MapKind::Square => Box::new(|x| x * x),
            MapKind::Scale(c) => Box::new(move |x| x * c),
            MapKind::Shift(c) => Box::new(move |x| x + c),
            MapKind::ClampMax(c) => Box::new(move |x| x.min(c)),
        };
        let out: Vec<f64> = self.value(a).iter().map(|&x| f(x)).collect();
        Self::check_finite(&out, "map")?;
        let dims = self.dims(a);
        let ng = self.ng(a);
        Ok(self.push(out, dims, Op::Map { a, kind }, ng))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumError> {
        self.map(a, MapKind::Relu)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, NumError> {
        self.map(a, MapKind::Scale(c))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, NumError> {
        let out: Vec<f64> = self.value(a).iter().map(|x| x.exp()).collect();
        Self::check_finite(&out, "exp")?;
        let dims = self.dims(a);
        let ng = self.ng(a);
        Ok(self.push(out, dims, Op::Exp { a }, ng))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var, NumError> {
        let s: f64 = self.value(a).iter().sum();
        Self::check_finite(&[s], "sum")?;
        let ng = self.ng(a);
        Ok(self.push(vec![s], (1, 1), Op::SumAll { a }, ng))
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var, NumError> {
        let (r, c) = self.dims(a);
        let mut out = vec![0.0; c];
        for chunk in self.value(a).chunks(c) {
            for (o, x) in out.iter_mut().zip(chunk) {
                *o += x;
            }
        }
        let inv = 1.0 / r as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        let ng = self.ng(a);
        Ok(self.push(out, (1, c), Op::MeanRows { a }, ng))
    }

    /// Divide each row by its sum. Rows must have a positive sum.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var, NumError> {
        let (r, c) = self.dims(a);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(c) {
            let s: f64 = row.iter().sum();
            if s <= 0.0 || !s.is_finite() {
                return Err(NumError::NonPositiveSum { op: "row_normalize" });
            }
            row.iter_mut().for_each(|x| *x /= s);
        }
        let ng = self.ng(a);
        Ok(self.push(out, (r, c), Op::RowNormalize { a }, ng))
    }

    /// Divide each column by its sum. Columns must have a positive sum.
    pub fn col_normalize(&mut self, a: Var) -> Result<Var, NumError> {
        let (r, c) = self.dims(a);
        let mut out = self.value(a).to_vec();
        let sums = col_sums(&out, r, c);
        if sums.iter().any(|s| *s <= 0.0 || !s.is_finite()) {
            return Err(NumError::NonPositiveSum { op: "col_normalize" });
        }
        for row in out.chunks_mut(c) {
            for (x, s) in row.iter_mut().zip(&sums) {
                *x /= s;
            }
        }
        let ng = self.ng(a);
        Ok(self.push(out, (r, c), Op::ColNormalize { a }, ng))
    }

    /// Subtract each row's log-sum-exp, so the row exponentiates to a
    /// distribution. The log-domain counterpart of [`Tape::row_normalize`].
    pub fn row_log_normalize(&mut self, a: Var) -> Result<Var, NumError> {
        let (r, c) = self.dims(a);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(c) {
            let lse = log_sum_exp(row.iter().copied());
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let ng = self.ng(a);
        Ok(self.push(out, (r, c), Op::RowLogNormalize { a }, ng))
    }

    /// Subtract each column's log-sum-exp.
    pub fn col_log_normalize(&mut self, a: Var) -> Result<Var, NumError> {
        let (r, c) = self.dims(a);
        let mut out = self.value(a).to_vec();
        let lse: Vec<f64> = (0..c).map(|j| log_sum_exp((0..r).map(|i| out[i * c + j]))).collect();
        for row in out.chunks_mut(c) {
            row.iter_mut().zip(&lse).for_each(|(x, l)| *x -= l);
        }
        let ng = self.ng(a);
        Ok(self.push(out, (r, c), Op::ColLogNormalize { a }, ng))
    }

    /// Sum of element-wise products; operands must share a shape.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.same_shape(a, b, "dot")?;
        let s: f64 = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        Self::check_finite(&[s], "dot")?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(vec![s], (1, 1), Op::Dot { a, b }, ng))
    }

    /// Euclidean (Frobenius) norm.
    pub fn norm(&mut self, a: Var) -> Result<Var, NumError> {
        let s = self.value(a).iter().map(|x| x * x).sum::<f64>().sqrt();
        Self::check_finite(&[s], "norm")?;
        let ng = self.ng(a);
        Ok(self.push(vec![s], (1, 1), Op::Norm { a }, ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumError> {
        let (r, c) = self.dims(a);
        let out = transposed(self.value(a), r, c);
        let ng = self.ng(a);
        Ok(self.push(out, (c, r), Op::Transpose { a }, ng))
    }

    pub fn row_slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumError> {
        let (r, c) = self.dims(a);
        if start + len > r {
            return Err(NumError::OutOfRange(format!("row slice {start}..{} of a {r}-row value", start + len)));
        }
        let out = self.value(a)[start * c..(start + len) * c].to_vec();
        let ng = self.ng(a);
        Ok(self.push(out, (len, c), Op::RowSlice { a, start }, ng))
    }

    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let c = parts.first().map_or(0, |&p| self.dims(p).1);
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, pc) = self.dims(p);
            if pc != c {
                return Err(NumError::ShapeMismatch {
                    op: "vstack",
                    left: vec![rows, c],
                    right: vec![r, pc],
                });
            }
            out.extend_from_slice(self.value(p));
            rows += r;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, (rows, c), Op::VStack { parts: parts.to_vec() }, ng))
    }

    /// Sum of neighbour rows per node. The adjacency lists must describe an
    /// undirected graph, which makes the operation its own adjoint.
    pub fn neighbor_sum(&mut self, a: Var, adj: Arc<Vec<Vec<usize>>>) -> Result<Var, NumError> {
        let (r, c) = self.dims(a);
        if adj.len() != r || adj.iter().flatten().any(|&j| j >= r) {
            return Err(NumError::OutOfRange(format!("adjacency for {} nodes applied to {r} rows", adj.len())));
        }
        let out = neighbor_sum_values(self.value(a), c, &adj);
        let ng = self.ng(a);
        Ok(self.push(out, (r, c), Op::NeighborSum { a, adj }, ng))
    }

    /// Populate gradients of the scalar `out` with respect to every recorded
    /// value that depends on a `requires_grad` leaf.
    pub fn backward(&mut self, out: Var) -> Result<(), NumError> {
        let (r, c) = self.dims(out);
        if r * c != 1 {
            return Err(NumError::NonScalarOutput(vec![r, c]));
        }
        let n = out.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.records.len()).map(|_| None).collect();
        grads[out.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.records[i].needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (i, g) in grads.iter_mut().enumerate() {
            if !self.records[i].needs_grad {
                *g = None;
            }
        }
        if let Some(i) = grads.iter().position(|g| g.as_ref().is_some_and(|g| g.iter().any(|v| !v.is_finite()))) {
            return Err(NumError::NonFinite {
                context: format!("gradient of record {i}"),
            });
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last `backward` output with respect to `v`; `None` for
    /// detached values.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.ng(v) {
            return;
        }
        let len = self.value(v).len();
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let rec = &self.records[i];
        let y = rec.value.as_slice();
        let (rows, cols) = rec.dims;
        match rec.op {
            Op::Leaf => {}
            Op::Transpose { a } => {
                self.accumulate(grads, a, |ga| add_into(ga, &transposed(g, rows, cols)));
            }
            Op::RowSlice { a, start } => {
                self.accumulate(grads, a, |ga| add_into(&mut ga[start * cols..(start + rows) * cols], g));
            }
            Op::VStack { ref parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.accumulate(grads, p, |gp| add_into(gp, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::NeighborSum { a, ref adj } => {
                self.accumulate(grads, a, |ga| add_into(ga, &neighbor_sum_values(g, cols, adj)));
            }
            Op::MatMul { a, b, ta, tb } => {
                let (da, db) = (self.dims(a), self.dims(b));
                let (va, vb) = (self.value(a), self.value(b));
                let dc = (rows, cols);
                self.accumulate(grads, a, |ga| {
                    if ta {
                        gemm(vb, db, tb, g, dc, true, 1.0, ga);
                    } else {
                        gemm(g, dc, false, vb, db, !tb, 1.0, ga);
                    }
                });
                self.accumulate(grads, b, |gb| {
                    if tb {
                        gemm(g, dc, true, va, da, ta, 1.0, gb);
                    } else {
                        gemm(va, da, !ta, g, dc, false, 1.0, gb);
                    }
                });
            }
            Op::Add { a, b } => {
                self.accumulate(grads, a, |ga| add_into(ga, g));
                self.accumulate(grads, b, |gb| add_into(gb, g));
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, a, |ga| add_into(ga, g));
                self.accumulate(grads, b, |gb| gb.iter_mut().zip(g).for_each(|(o, x)| *o -= x));
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(a), self.value(b));
                self.accumulate(grads, a, |ga| {
                    for ((o, x), y) in ga.iter_mut().zip(g).zip(vb) {
                        *o += x * y;
                    }
                });
                self.accumulate(grads, b, |gb| {
                    for ((o, x), y) in gb.iter_mut().zip(g).zip(va) {
                        *o += x * y;
                    }
                });
            }
            Op::Div { a, b } => {
                let (va, vb) = (self.value(a), self.value(b));
                self.accumulate(grads, a, |ga| {
                    for ((o, x), d) in ga.iter_mut().zip(g).zip(vb) {
                        *o += x / d;
                    }
                });
                self.accumulate(grads, b, |gb| {
                    for (((o, x), n), d) in gb.iter_mut().zip(g).zip(va).zip(vb) {
                        *o -= x * n / (d * d);
                    }
                });
            }
            Op::AddRow { a, row } => {
                self.accumulate(grads, a, |ga| add_into(ga, g));
                self.accumulate(grads, row, |gr| {
                    for chunk in g.chunks(cols) {
                        add_into(gr, chunk);
                    }
                });
            }
            Op::Concat { a, b } => {
                let ca = self.dims(a).1;
                let cb = cols - ca;
                self.accumulate(grads, a, |ga| {
                    for r in 0..rows {
                        add_into(&mut ga[r * ca..(r + 1) * ca], &g[r * cols..r * cols + ca]);
                    }
                });
                self.accumulate(grads, b, |gb| {
                    for r in 0..rows {
                        add_into(&mut gb[r * cb..(r + 1) * cb], &g[r * cols + ca..(r + 1) * cols]);
                    }
                });
            }
            Op::Map { a, kind } => {
                let x = self.value(a);
                self.accumulate(grads, a, |ga| {
                    for (((o, gi), xi), yi) in ga.iter_mut().zip(g).zip(x).zip(y) {
                        let d = match kind {
                            MapKind::Relu => {
                                if *xi > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            MapKind::Sigmoid => yi * (1.0 - yi),
                            MapKind::Square => 2.0 * xi,
                            MapKind::Scale(c) => c,
                            MapKind::Shift(_) => 1.0,
                            MapKind::ClampMax(c) => {
                                if *xi < c {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        };
                        *o += gi * d;
                    }
                });
            }
            Op::Exp { a } => {
                self.accumulate(grads, a, |ga| {
                    for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                        *o += gi * yi;
                    }
                });
            }
            Op::SumAll { a } => {
                self.accumulate(grads, a, |ga| ga.iter_mut().for_each(|o| *o += g[0]));
            }
            Op::MeanRows { a } => {
                let r = self.dims(a).0;
                let inv = 1.0 / r as f64;
                self.accumulate(grads, a, |ga| {
                    for chunk in ga.chunks_mut(cols) {
                        for (o, gi) in chunk.iter_mut().zip(g) {
                            *o += gi * inv;
                        }
                    }
                });
            }
            Op::RowNormalize { a } => {
                let x = self.value(a);
                self.accumulate(grads, a, |ga| {
                    for r in 0..rows {
                        let span = r * cols..(r + 1) * cols;
                        let s: f64 = x[span.clone()].iter().sum();
                        let gy: f64 = g[span.clone()].iter().zip(&y[span.clone()]).map(|(a, b)| a * b).sum();
                        for j in span {
                            ga[j] += (g[j] - gy) / s;
                        }
                    }
                });
            }
            Op::ColNormalize { a } => {
                let x = self.value(a);
                self.accumulate(grads, a, |ga| {
                    let sums = col_sums(x, rows, cols);
                    let mut gy = vec![0.0; cols];
                    for r in 0..rows {
                        for j in 0..cols {
                            gy[j] += g[r * cols + j] * y[r * cols + j];
                        }
                    }
                    for r in 0..rows {
                        for j in 0..cols {
                            ga[r * cols + j] += (g[r * cols + j] - gy[j]) / sums[j];
                        }
                    }
                });
            }
            Op::RowLogNormalize { a } => {
                self.accumulate(grads, a, |ga| {
                    for r in 0..rows {
                        let span = r * cols..(r + 1) * cols;
                        let total: f64 = g[span.clone()].iter().sum();
                        for j in span {
                            ga[j] += g[j] - y[j].exp() * total;
                        }
                    }
                });
            }
            Op::ColLogNormalize { a } => {
                self.accumulate(grads, a, |ga| {
                    let totals = col_sums(g, rows, cols);
                    for r in 0..rows {
                        for j in 0..cols {
                            let i = r * cols + j;
                            ga[i] += g[i] - y[i].exp() * totals[j];
                        }
                    }
                });
            }
            Op::Dot { a, b } => {
                let (va, vb) = (self.value(a), self.value(b));
                self.accumulate(grads, a, |ga| {
                    for (o, y) in ga.iter_mut().zip(vb) {
                        *o += g[0] * y;
                    }
                });
                self.accumulate(grads, b, |gb| {
                    for (o, x) in gb.iter_mut().zip(va) {
                        *o += g[0] * x;
                    }
                });
            }
            Op::Norm { a } => {
                let x = self.value(a);
                let nrm = y[0];
                if nrm > 0.0 {
                    self.accumulate(grads, a, |ga| {
                        for (o, xi) in ga.iter_mut().zip(x) {
                            *o += g[0] * xi / nrm;
                        }
                    });
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn col_sums(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut sums = vec![0.0; cols];
    for r in 0..rows {
        for (s, v) in sums.iter_mut().zip(&x[r * cols..(r + 1) * cols]) {
            *s += v;
        }
    }
    sums
}

fn neighbor_sum_values(x: &[f64], cols: usize, adj: &[Vec<usize>]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (i, nbrs) in adj.iter().enumerate() {
        let row = &mut out[i * cols..(i + 1) * cols];
        for &j in nbrs {
            add_into(row, &x[j * cols..(j + 1) * cols]);
        }
    }
    out
}

fn transposed(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}
