//! Define-by-run tape. Every op computes its value eagerly and, when any
//! input needs a gradient, records what the backward pass will need.
//! Node creation order is a topological order, so backward is a single
//! reverse sweep.

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul_a_bt_acc, matmul_at_b_acc, matmul_into, Real, Tensor};
use super::DiffError;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Row layout of an alpha-compositing op: samples of ray `r` are
/// `offsets[r]..offsets[r + 1]`.
#[derive(Clone, Debug)]
pub struct CompositeLayout<R> {
    pub offsets: Vec<usize>,
    pub deltas: Vec<R>,
    pub background: [R; 3],
}

/// Sparse interpolation pattern: output row `n`, group `g` is
/// `sum_k weights[n, g, k] * table[indices[n, g, k], :]`.
#[derive(Clone, Debug)]
pub struct GatherPattern<R> {
    pub rows: usize,
    pub groups: usize,
    pub taps: usize,
    pub indices: Vec<u32>,
    pub weights: Vec<R>,
}

enum Value<R> {
    Owned(Tensor<R>),
    Param(ParamId),
}

enum Op<R> {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, R),
    Shift(Var),
    MatMul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Softplus(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    RowNorm(Var),
    Normalize(Var),
    Concat(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    WeightedGather(Var, GatherPattern<R>),
    Composite(Var, Var, CompositeLayout<R>),
}

struct Node<R> {
    value: Value<R>,
    op: Op<R>,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<R> {
    params: Vec<Option<Tensor<R>>>,
    leaves: Vec<Option<Vec<R>>>,
    param_shapes: Vec<Vec<usize>>,
}

impl<R: Real> Gradients<R> {
    /// Gradient for a parameter; zero if it was not reachable from the loss.
    pub fn param(&self, id: ParamId) -> Tensor<R> {
        match &self.params[id.index()] {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.param_shapes[id.index()]),
        }
    }

    pub fn param_ref(&self, id: ParamId) -> Option<&Tensor<R>> {
        self.params[id.index()].as_ref()
    }

    /// Gradient for a leaf created with `requires_grad = true`.
    pub fn leaf(&self, v: Var) -> Option<&[R]> {
        self.leaves.get(v.0).and_then(|g| g.as_deref())
    }
}

pub struct Graph<'s, R: Real> {
    store: &'s ParamStore<R>,
    nodes: Vec<Node<R>>,
    record: bool,
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> DiffError {
    DiffError::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl<'s, R: Real> Graph<'s, R> {
    /// A recording tape over the given parameters.
    pub fn new(store: &'s ParamStore<R>) -> Self {
        Self { store, nodes: Vec::new(), record: true }
    }

    /// A tape that computes values only; nothing is kept for backward.
    pub fn inference(store: &'s ParamStore<R>) -> Self {
        Self { store, nodes: Vec::new(), record: false }
    }

    pub fn store(&self) -> &'s ParamStore<R> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.get(*id),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<R>, op: Op<R>, inputs: &[Var]) -> Var {
        let needs_grad = self.record && inputs.iter().any(|&v| self.needs(v));
        let op = if needs_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value: Value::Owned(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<R>) -> Var {
        self.nodes.push(Node { value: Value::Owned(t), op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Input leaf; with `requires_grad` its gradient is reported by [`Gradients::leaf`].
    pub fn leaf(&mut self, t: Tensor<R>, requires_grad: bool) -> Var {
        let needs_grad = requires_grad && self.record;
        self.nodes.push(Node { value: Value::Owned(t), op: Op::Leaf, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let needs_grad = self.record && self.store.is_trainable(id);
        let op = if needs_grad { Op::Param(id) } else { Op::Leaf };
        self.nodes.push(Node { value: Value::Param(id), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn binary_same(&self, op: &str, a: Var, b: Var) -> Result<(), DiffError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(R, R) -> R) -> Tensor<R> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary_same("add", a, b)?;
        let out = self.zip(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary_same("sub", a, b)?;
        let out = self.zip(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary_same("mul", a, b)?;
        let out = self.zip(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// `a[n, m] + b[m]`, broadcasting `b` over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let m = ta.cols();
        if tb.len() != m {
            return Err(shape_err("add_row", ta.shape(), tb.shape()));
        }
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(m) {
            for (o, &bv) in row.iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(out, Op::AddRow(a, b), &[a, b]))
    }

    /// `a[n, m] * c[n, 1]`, broadcasting `c` over columns.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var, DiffError> {
        let (ta, tc) = (self.value(a), self.value(c));
        if tc.len() != ta.rows() {
            return Err(shape_err("mul_col", ta.shape(), tc.shape()));
        }
        let m = ta.cols();
        let mut data = ta.data().to_vec();
        for (row, &cv) in data.chunks_mut(m).zip(tc.data()) {
            for o in row {
                *o *= cv;
            }
        }
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(out, Op::MulCol(a, c), &[a, c]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = R::of(s);
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    /// Adds a constant to every element.
    pub fn shift(&mut self, a: Var, s: f64) -> Var {
        let s = R::of(s);
        let out = self.value(a).map(|x| x + s);
        self.push(out, Op::Shift(a), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_err("matmul", ta.shape(), tb.shape()));
        }
        let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut data = vec![R::zero(); n * m];
        matmul_into(ta.data(), tb.data(), &mut data, n, k, m);
        let out = Tensor::new(&[n, m], data)?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > R::zero() { x } else { R::zero() });
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.exp());
        self.push(out, Op::Exp(a), &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        self.push(out, Op::Softplus(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: R = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.len().max(1);
        let s: R = t.data().iter().copied().sum();
        self.push(Tensor::scalar(s / R::of(n as f64)), Op::Mean(a), &[a])
    }

    /// Per-row sum: `[n, m] -> [n, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.cols();
        let data: Vec<R> = t.data().chunks(m).map(|r| r.iter().copied().sum()).collect();
        let out = Tensor::new(&[t.rows(), 1], data).expect("rows");
        self.push(out, Op::SumCols(a), &[a])
    }

    /// Per-row Euclidean norm: `[n, m] -> [n, 1]`. Zero rows get a zero gradient.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.cols();
        let data: Vec<R> =
            t.data().chunks(m).map(|r| r.iter().map(|&x| x * x).sum::<R>().sqrt()).collect();
        let out = Tensor::new(&[t.rows(), 1], data).expect("rows");
        self.push(out, Op::RowNorm(a), &[a])
    }

    /// Scales every row to unit length. Zero rows map to zero.
    pub fn normalize(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.cols();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(m) {
            let n = row.iter().map(|&x| x * x).sum::<R>().sqrt();
            if n > R::zero() {
                for x in row {
                    *x = *x / n;
                }
            }
        }
        let out = Tensor::new(t.shape(), data).expect("same shape");
        self.push(out, Op::Normalize(a), &[a])
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(shape_err("concat", self.value(parts[0]).shape(), t.shape()));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(&[rows, total], data)?;
        Ok(self.push(out, Op::Concat(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let t = self.value(a);
        if start + len > t.rows() {
            return Err(DiffError::Shape(format!("slice_rows {start}+{len} of {:?}", t.shape())));
        }
        let m = t.cols();
        let out = Tensor::new(&[len, m], t.data()[start * m..(start + len) * m].to_vec())?;
        Ok(self.push(out, Op::SliceRows(a, start), &[a]))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let t = self.value(a);
        let m = t.cols();
        if start + len > m {
            return Err(DiffError::Shape(format!("slice_cols {start}+{len} of {:?}", t.shape())));
        }
        let mut data = Vec::with_capacity(t.rows() * len);
        for row in t.data().chunks(m) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let out = Tensor::new(&[t.rows(), len], data)?;
        Ok(self.push(out, Op::SliceCols(a, start), &[a]))
    }

    /// Row selection, repeats allowed.
    pub fn gather(&mut self, a: Var, rows: &[usize]) -> Result<Var, DiffError> {
        let t = self.value(a);
        let m = t.cols();
        let mut data = Vec::with_capacity(rows.len() * m);
        for &r in rows {
            if r >= t.rows() {
                return Err(DiffError::Shape(format!("gather row {r} of {:?}", t.shape())));
            }
            data.extend_from_slice(t.row(r));
        }
        let out = Tensor::new(&[rows.len(), m], data)?;
        Ok(self.push(out, Op::Gather(a, rows.to_vec()), &[a]))
    }

    /// Weighted multi-tap gather from a `[entries, features]` table.
    pub fn weighted_gather(&mut self, table: Var, pattern: GatherPattern<R>) -> Result<Var, DiffError> {
        let t = self.value(table);
        let f = t.cols();
        let (n, g, k) = (pattern.rows, pattern.groups, pattern.taps);
        if pattern.indices.len() != n * g * k || pattern.weights.len() != n * g * k {
            return Err(DiffError::Shape("weighted_gather: pattern size mismatch".into()));
        }
        let entries = t.rows() as u32;
        if let Some(&bad) = pattern.indices.iter().find(|&&i| i >= entries) {
            return Err(DiffError::Shape(format!("weighted_gather: index {bad} >= {entries}")));
        }
        let td = t.data();
        let mut data = vec![R::zero(); n * g * f];
        for (j, out) in data.chunks_mut(f).enumerate() {
            let base = j * k;
            for tap in 0..k {
                let w = pattern.weights[base + tap];
                let e = pattern.indices[base + tap] as usize;
                for (o, &v) in out.iter_mut().zip(&td[e * f..(e + 1) * f]) {
                    *o += w * v;
                }
            }
        }
        let out = Tensor::new(&[n, g * f], data)?;
        Ok(self.push(out, Op::WeightedGather(table, pattern), &[table]))
    }

    /// Front-to-back alpha compositing of per-sample densities `[S, 1]` and
    /// colors `[S, 3]` into per-ray colors `[rays, 3]`.
    pub fn composite(&mut self, sigma: Var, color: Var, layout: CompositeLayout<R>) -> Result<Var, DiffError> {
        let (ts, tc) = (self.value(sigma), self.value(color));
        let samples = *layout.offsets.last().unwrap_or(&0);
        if ts.len() != samples || tc.len() != samples * 3 || layout.deltas.len() != samples {
            return Err(DiffError::Shape(format!(
                "composite: {samples} samples vs sigma {:?}, color {:?}",
                ts.shape(),
                tc.shape()
            )));
        }
        let rays = layout.offsets.len() - 1;
        let mut data = vec![R::zero(); rays * 3];
        for r in 0..rays {
            let range = layout.offsets[r]..layout.offsets[r + 1];
            let res = composite_ray(
                &ts.data()[range.clone()],
                &tc.data()[range.start * 3..range.end * 3],
                &layout.deltas[range],
                layout.background,
            );
            data[r * 3..r * 3 + 3].copy_from_slice(&res.color);
        }
        let out = Tensor::new(&[rays, 3], data)?;
        Ok(self.push(out, Op::Composite(sigma, color, layout), &[sigma, color]))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<R>, DiffError> {
        if self.value(loss).len() != 1 {
            return Err(DiffError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        if self.nodes.is_empty() {
            return Err(DiffError::EmptyTape);
        }
        let n_params = self.store.len();
        let mut out = Gradients {
            params: (0..n_params).map(|_| None).collect(),
            leaves: (0..self.nodes.len()).map(|_| None).collect(),
            param_shapes: (0..n_params).map(|i| self.store.get(ParamId::from_index(i)).shape().to_vec()).collect(),
        };
        if !self.needs(loss) {
            return Ok(out);
        }
        let mut grads: Vec<Option<Vec<R>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![R::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    if node.needs_grad {
                        out.leaves[i] = Some(g);
                    }
                }
                Op::Param(id) => {
                    let slot = &mut out.params[id.index()];
                    match slot {
                        Some(t) => {
                            for (a, b) in t.data_mut().iter_mut().zip(&g) {
                                *a += *b;
                            }
                        }
                        None => *slot = Some(Tensor::new(self.store.get(*id).shape(), g)?),
                    }
                }
                op => self.backward_op(op, Var(i), &g, &mut grads),
            }
        }
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Vec<R>>], v: Var, f: impl FnOnce(&mut [R])) {
        if !self.needs(v) {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(vec![R::zero(); self.value(v).len()]);
        }
        f(slot.as_mut().unwrap());
    }

    fn backward_op(&self, op: &Op<R>, out: Var, g: &[R], grads: &mut [Option<Vec<R>>]) {
        let y = self.value(out).data();
        match op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::Add(a, b) => {
                self.acc(grads, *a, |d| add_into(d, g));
                self.acc(grads, *b, |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |d| add_into(d, g));
                self.acc(grads, *b, |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |d| {
                    for ((d, &g), &v) in d.iter_mut().zip(g).zip(vb) {
                        *d += g * v;
                    }
                });
                self.acc(grads, *b, |d| {
                    for ((d, &g), &v) in d.iter_mut().zip(g).zip(va) {
                        *d += g * v;
                    }
                });
            }
            Op::AddRow(a, b) => {
                self.acc(grads, *a, |d| add_into(d, g));
                let m = self.value(*b).len();
                self.acc(grads, *b, |d| {
                    for row in g.chunks(m) {
                        add_into(d, row);
                    }
                });
            }
            Op::MulCol(a, c) => {
                let (va, vc) = (self.value(*a), self.value(*c));
                let m = va.cols();
                self.acc(grads, *a, |d| {
                    for ((drow, grow), &cv) in d.chunks_mut(m).zip(g.chunks(m)).zip(vc.data()) {
                        for (d, &g) in drow.iter_mut().zip(grow) {
                            *d += g * cv;
                        }
                    }
                });
                self.acc(grads, *c, |d| {
                    for ((dc, grow), arow) in d.iter_mut().zip(g.chunks(m)).zip(va.data().chunks(m)) {
                        *dc += grow.iter().zip(arow).map(|(&g, &a)| g * a).sum::<R>();
                    }
                });
            }
            Op::Scale(a, s) => self.acc(grads, *a, |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * *s)),
            Op::Shift(a) => self.acc(grads, *a, |d| add_into(d, g)),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                self.acc(grads, *a, |d| matmul_a_bt_acc(g, tb.data(), d, n, k, m));
                self.acc(grads, *b, |d| matmul_at_b_acc(ta.data(), g, d, n, k, m));
            }
            Op::Relu(a) => self.acc(grads, *a, |d| {
                for ((d, &g), &y) in d.iter_mut().zip(g).zip(y) {
                    if y > R::zero() {
                        *d += g;
                    }
                }
            }),
            Op::Sigmoid(a) => self.acc(grads, *a, |d| {
                for ((d, &g), &y) in d.iter_mut().zip(g).zip(y) {
                    *d += g * y * (R::one() - y);
                }
            }),
            Op::Tanh(a) => self.acc(grads, *a, |d| {
                for ((d, &g), &y) in d.iter_mut().zip(g).zip(y) {
                    *d += g * (R::one() - y * y);
                }
            }),
            Op::Exp(a) => self.acc(grads, *a, |d| {
                for ((d, &g), &y) in d.iter_mut().zip(g).zip(y) {
                    *d += g * y;
                }
            }),
            Op::Softplus(a) => {
                let x = self.value(*a).data();
                self.acc(grads, *a, |d| {
                    for ((d, &g), &x) in d.iter_mut().zip(g).zip(x) {
                        *d += g * sigmoid(x);
                    }
                })
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                self.acc(grads, *a, |d| {
                    for ((d, &g), &x) in d.iter_mut().zip(g).zip(x) {
                        *d += g * (x + x);
                    }
                })
            }
            Op::Sum(a) => self.acc(grads, *a, |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let n = R::of(self.value(*a).len().max(1) as f64);
                self.acc(grads, *a, |d| d.iter_mut().for_each(|d| *d += g[0] / n))
            }
            Op::SumCols(a) => {
                let m = self.value(*a).cols();
                self.acc(grads, *a, |d| {
                    for (drow, &g) in d.chunks_mut(m).zip(g) {
                        drow.iter_mut().for_each(|d| *d += g);
                    }
                })
            }
            Op::RowNorm(a) => {
                let x = self.value(*a);
                let m = x.cols();
                self.acc(grads, *a, |d| {
                    for (((drow, xrow), &g), &n) in d.chunks_mut(m).zip(x.data().chunks(m)).zip(g).zip(y) {
                        if n > R::zero() {
                            for (d, &x) in drow.iter_mut().zip(xrow) {
                                *d += g * x / n;
                            }
                        }
                    }
                })
            }
            Op::Normalize(a) => {
                let x = self.value(*a);
                let m = x.cols();
                self.acc(grads, *a, |d| {
                    for (((drow, xrow), grow), yrow) in
                        d.chunks_mut(m).zip(x.data().chunks(m)).zip(g.chunks(m)).zip(y.chunks(m))
                    {
                        let n = xrow.iter().map(|&v| v * v).sum::<R>().sqrt();
                        if n == R::zero() {
                            continue;
                        }
                        let gy: R = grow.iter().zip(yrow).map(|(&g, &y)| g * y).sum();
                        for ((d, &g), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += (g - gy * y) / n;
                        }
                    }
                })
            }
            Op::Concat(parts) => {
                let total: usize = y.len() / self.value(out).rows().max(1);
                let mut col = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    self.acc(grads, p, |d| {
                        for (drow, grow) in d.chunks_mut(pc).zip(g.chunks(total)) {
                            add_into(drow, &grow[col..col + pc]);
                        }
                    });
                    col += pc;
                }
            }
            Op::SliceRows(a, start) => {
                let m = self.value(*a).cols();
                self.acc(grads, *a, |d| add_into(&mut d[start * m..start * m + g.len()], g))
            }
            Op::SliceCols(a, start) => {
                let m = self.value(*a).cols();
                let len = self.value(out).cols();
                self.acc(grads, *a, |d| {
                    for (drow, grow) in d.chunks_mut(m).zip(g.chunks(len)) {
                        add_into(&mut drow[*start..start + len], grow);
                    }
                })
            }
            Op::Gather(a, rows) => {
                let m = self.value(*a).cols();
                self.acc(grads, *a, |d| {
                    for (&r, grow) in rows.iter().zip(g.chunks(m)) {
                        add_into(&mut d[r * m..(r + 1) * m], grow);
                    }
                })
            }
            Op::WeightedGather(table, p) => {
                let f = self.value(*table).cols();
                self.acc(grads, *table, |d| {
                    for (j, grow) in g.chunks(f).enumerate() {
                        let base = j * p.taps;
                        for tap in 0..p.taps {
                            let w = p.weights[base + tap];
                            let e = p.indices[base + tap] as usize;
                            for (d, &g) in d[e * f..(e + 1) * f].iter_mut().zip(grow) {
                                *d += w * g;
                            }
                        }
                    }
                })
            }
            Op::Composite(sigma, color, layout) => {
                let (ts, tc) = (self.value(*sigma).data(), self.value(*color).data());
                let rays = layout.offsets.len() - 1;
                let mut dsig = vec![R::zero(); ts.len()];
                let mut dcol = vec![R::zero(); tc.len()];
                for r in 0..rays {
                    let (lo, hi) = (layout.offsets[r], layout.offsets[r + 1]);
                    let gr = &g[r * 3..r * 3 + 3];
                    let total = [y[r * 3], y[r * 3 + 1], y[r * 3 + 2]];
                    let mut trans = R::one();
                    let mut prefix = [R::zero(); 3];
                    for s in lo..hi {
                        let tau = ts[s] * layout.deltas[s];
                        let keep = (-tau).exp();
                        let w = trans * (R::one() - keep);
                        let next = trans * keep;
                        let c = &tc[s * 3..s * 3 + 3];
                        let mut ds = R::zero();
                        for ch in 0..3 {
                            prefix[ch] += w * c[ch];
                            let rest = total[ch] - prefix[ch];
                            ds += gr[ch] * (next * c[ch] - rest);
                            dcol[s * 3 + ch] += gr[ch] * w;
                        }
                        dsig[s] += ds * layout.deltas[s];
                        trans = next;
                    }
                }
                self.acc(grads, *sigma, |d| add_into(d, &dsig));
                self.acc(grads, *color, |d| add_into(d, &dcol));
            }
        }
    }
}

fn add_into<R: Real>(d: &mut [R], g: &[R]) {
    for (d, &g) in d.iter_mut().zip(g) {
        *d += g;
    }
}

#[inline]
pub fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

#[inline]
pub fn softplus<R: Real>(x: R) -> R {
    if x > R::of(20.0) {
        x
    } else {
        x.max(R::zero()) + (-x.abs()).exp().ln_1p()
    }
}

/// Result of compositing one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RayComposite<R> {
    pub color: [R; 3],
    pub weights: Vec<R>,
    /// Transmittance left after the last sample.
    pub transmittance: R,
}

/// Alpha compositing with exclusive transmittance:
/// `T_m = exp(-sum_{j<m} sigma_j delta_j)`, `w_m = T_m (1 - exp(-sigma_m delta_m))`.
pub fn composite_ray<R: Real>(sigma: &[R], color: &[R], deltas: &[R], background: [R; 3]) -> RayComposite<R> {
    let mut trans = R::one();
    let mut out = [R::zero(); 3];
    let mut weights = Vec::with_capacity(sigma.len());
    for (s, (&sg, &dt)) in sigma.iter().zip(deltas).enumerate() {
        let keep = (-(sg * dt)).exp();
        let w = trans * (R::one() - keep);
        for ch in 0..3 {
            out[ch] += w * color[s * 3 + ch];
        }
        weights.push(w);
        trans = trans * keep;
    }
    for ch in 0..3 {
        out[ch] += trans * background[ch];
    }
    RayComposite { color: out, weights, transmittance: trans }
}
