//! Reverse-mode differentiation over recorded matrix operations.
//!
//! A [`Tape`] owns every intermediate value of one forward computation.
//! Operations record just enough (operand indices plus the forward result)
//! to push output-gradients back to input-gradients in a single reverse
//! sweep. One tape corresponds to one forward pass; build a fresh tape per
//! loss evaluation.

use super::matrix::{elementwise as mat_elementwise, reduce as mat_reduce, Matrix};
use super::{Axis, DiffError, ElemOp, ReduceOp};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    /// x + row vector broadcast over rows of x.
    AddRowVec(usize, usize),
    /// Row vector tiled to `n` rows.
    RepeatRows(usize),
    /// Rows of x scaled by entries of an Nx1 vector.
    MulColVec(usize, usize),
    /// Columns of x scaled by entries of a 1xM vector.
    MulRowVec(usize, usize),
    /// x minus a 1x1 scalar broadcast everywhere.
    SubScalar(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    Elem(ElemOp, usize),
    Sqrt(usize),
    /// d^(-1/2) with 0 mapped to 0 (degree normalization convention).
    InvSqrtOrZero(usize),
    /// 1/d with 0 mapped to 0.
    RecipOrZero(usize),
    Clamp(usize, f64, f64),
    Min(usize, usize),
    /// Forward: indicator(x >= threshold); backward: identity.
    StraightThrough(usize),
    Reduce(ReduceOp, Axis, usize),
    Transpose(usize),
    ConcatCols(usize, usize),
    /// One column index per row; output is Nx1.
    GatherCols(usize, Vec<usize>),
    LogSoftmaxRows(usize),
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Recorded forward computation supporting one reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Record an input value (parameter, observation, constant).
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a.0, b.0)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(value, Op::Mul(a.0, b.0)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let value = self.value(a).zip(self.value(b), |x, y| x / y)?;
        if !value.all_finite() {
            return Err(DiffError::Domain("division produced non-finite entries".into()));
        }
        Ok(self.push(value, Op::Div(a.0, b.0)))
    }

    pub fn add_row_vec(&mut self, x: Var, v: Var) -> Result<Var, DiffError> {
        let (xm, vm) = (self.value(x), self.value(v));
        if vm.rows() != 1 || vm.cols() != xm.cols() {
            return Err(DiffError::Shape(format!(
                "add_row_vec {}x{} with {}x{}",
                xm.rows(),
                xm.cols(),
                vm.rows(),
                vm.cols()
            )));
        }
        let mut out = xm.clone();
        for r in 0..out.rows() {
            let cols = out.cols();
            for c in 0..cols {
                let val = out.get(r, c) + vm.get(0, c);
                out.set(r, c, val);
            }
        }
        Ok(self.push(out, Op::AddRowVec(x.0, v.0)))
    }

    pub fn repeat_rows(&mut self, v: Var, n: usize) -> Result<Var, DiffError> {
        let vm = self.value(v);
        if vm.rows() != 1 {
            return Err(DiffError::Shape(format!("repeat_rows of {}x{}", vm.rows(), vm.cols())));
        }
        let mut data = Vec::with_capacity(n * vm.cols());
        for _ in 0..n {
            data.extend_from_slice(vm.data());
        }
        let out = Matrix::from_vec(n, vm.cols(), data)?;
        Ok(self.push(out, Op::RepeatRows(v.0)))
    }

    pub fn mul_col_vec(&mut self, x: Var, v: Var) -> Result<Var, DiffError> {
        let (xm, vm) = (self.value(x), self.value(v));
        if vm.cols() != 1 || vm.rows() != xm.rows() {
            return Err(DiffError::Shape(format!(
                "mul_col_vec {}x{} with {}x{}",
                xm.rows(),
                xm.cols(),
                vm.rows(),
                vm.cols()
            )));
        }
        let mut out = xm.clone();
        for r in 0..out.rows() {
            let s = vm.get(r, 0);
            for c in 0..out.cols() {
                let val = out.get(r, c) * s;
                out.set(r, c, val);
            }
        }
        Ok(self.push(out, Op::MulColVec(x.0, v.0)))
    }

    pub fn mul_row_vec(&mut self, x: Var, v: Var) -> Result<Var, DiffError> {
        let (xm, vm) = (self.value(x), self.value(v));
        if vm.rows() != 1 || vm.cols() != xm.cols() {
            return Err(DiffError::Shape(format!(
                "mul_row_vec {}x{} with {}x{}",
                xm.rows(),
                xm.cols(),
                vm.rows(),
                vm.cols()
            )));
        }
        let mut out = xm.clone();
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                let val = out.get(r, c) * vm.get(0, c);
                out.set(r, c, val);
            }
        }
        Ok(self.push(out, Op::MulRowVec(x.0, v.0)))
    }

    pub fn sub_scalar(&mut self, x: Var, s: Var) -> Result<Var, DiffError> {
        let sv = self.value(s).scalar()?;
        let out = self.value(x).map(|v| v - sv);
        Ok(self.push(out, Op::SubScalar(x.0, s.0)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).scale(c);
        self.push(out, Op::Scale(x.0, c))
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::AddConst(x.0))
    }

    /// Entrywise nonlinearity from the fixed op set.
    pub fn elementwise(&mut self, op: ElemOp, x: Var) -> Result<Var, DiffError> {
        let out = mat_elementwise(op, self.value(x))?;
        Ok(self.push(out, Op::Elem(op, x.0)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.elementwise(ElemOp::Sigmoid, x).expect("sigmoid is total")
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.elementwise(ElemOp::Relu, x).expect("relu is total")
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.elementwise(ElemOp::Tanh, x).expect("tanh is total")
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.elementwise(ElemOp::Exp, x).expect("exp is total")
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.elementwise(ElemOp::Square, x).expect("square is total")
    }

    pub fn negate(&mut self, x: Var) -> Var {
        self.elementwise(ElemOp::Negate, x).expect("negate is total")
    }

    pub fn log(&mut self, x: Var) -> Result<Var, DiffError> {
        self.elementwise(ElemOp::Log, x)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var, DiffError> {
        if self.value(x).data().iter().any(|v| *v < 0.0) {
            return Err(DiffError::Domain("sqrt of negative entry".into()));
        }
        let out = self.value(x).map(f64::sqrt);
        Ok(self.push(out, Op::Sqrt(x.0)))
    }

    pub fn inv_sqrt_or_zero(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { 1.0 / v.sqrt() } else { 0.0 });
        self.push(out, Op::InvSqrtOrZero(x.0))
    }

    pub fn recip_or_zero(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { 1.0 / v } else { 0.0 });
        self.push(out, Op::RecipOrZero(x.0))
    }

    /// Clamp to `[lo, hi]`; gradient is identity strictly inside the band
    /// and zero where the input was clamped.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        self.push(out, Op::Clamp(x.0, lo, hi))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let value = self.value(a).zip(self.value(b), f64::min)?;
        Ok(self.push(value, Op::Min(a.0, b.0)))
    }

    /// Hard threshold at 0.5 in the forward pass; the backward pass hands
    /// the output gradient to the input unchanged.
    pub fn straight_through_ge_half(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
        self.push(out, Op::StraightThrough(x.0))
    }

    pub fn reduce(&mut self, op: ReduceOp, x: Var, axis: Axis) -> Result<Var, DiffError> {
        let out = mat_reduce(op, self.value(x), axis)?;
        Ok(self.push(out, Op::Reduce(op, axis, x.0)))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var, DiffError> {
        self.reduce(ReduceOp::Sum, x, Axis::All)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var, DiffError> {
        self.reduce(ReduceOp::Mean, x, Axis::All)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        self.push(out, Op::Transpose(x.0))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (am, bm) = (self.value(a), self.value(b));
        if am.rows() != bm.rows() {
            return Err(DiffError::Shape(format!(
                "concat_cols {}x{} with {}x{}",
                am.rows(),
                am.cols(),
                bm.rows(),
                bm.cols()
            )));
        }
        let (rows, ac, bc) = (am.rows(), am.cols(), bm.cols());
        let mut data = Vec::with_capacity(rows * (ac + bc));
        for r in 0..rows {
            data.extend_from_slice(am.row(r));
            data.extend_from_slice(bm.row(r));
        }
        let out = Matrix::from_vec(rows, ac + bc, data)?;
        Ok(self.push(out, Op::ConcatCols(a.0, b.0)))
    }

    /// Select one entry per row; `idx[r]` is the column picked in row `r`.
    pub fn gather_cols(&mut self, x: Var, idx: &[usize]) -> Result<Var, DiffError> {
        let xm = self.value(x);
        if idx.len() != xm.rows() {
            return Err(DiffError::Shape(format!(
                "gather_cols needs {} indices, got {}",
                xm.rows(),
                idx.len()
            )));
        }
        if let Some(bad) = idx.iter().find(|c| **c >= xm.cols()) {
            return Err(DiffError::Shape(format!("gather_cols index {bad} out of range")));
        }
        let data: Vec<f64> = idx.iter().enumerate().map(|(r, &c)| xm.get(r, c)).collect();
        let out = Matrix::from_vec(xm.rows(), 1, data)?;
        Ok(self.push(out, Op::GatherCols(x.0, idx.to_vec())))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let xm = self.value(x);
        let mut out = xm.clone();
        for r in 0..out.rows() {
            let row_max = xm.row(r).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row_max
                + xm.row(r).iter().map(|v| (v - row_max).exp()).sum::<f64>().ln();
            for c in 0..out.cols() {
                let val = xm.get(r, c) - lse;
                out.set(r, c, val);
            }
        }
        self.push(out, Op::LogSoftmaxRows(x.0))
    }

    /// Reverse sweep from a 1x1 loss. Returns a gradient for every node;
    /// gradients of independent nodes are zero.
    pub fn backward(&self, loss: Var) -> Result<Gradients, DiffError> {
        let loss_value = self.value(loss).scalar()?;
        if !loss_value.is_finite() {
            return Err(DiffError::NonFinite("loss is not finite".into()));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, shapes: self.nodes.iter().map(|n| (n.value.rows(), n.value.cols())).collect() })
    }

    fn backprop_node(
        &self,
        i: usize,
        g: &Matrix,
        grads: &mut [Option<Matrix>],
    ) -> Result<(), DiffError> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let da = g.matmul(&self.nodes[*b].value.transpose())?;
                accumulate(grads, *a, da)?;
                let db = self.nodes[*a].value.transpose().matmul(g)?;
                accumulate(grads, *b, db)?;
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.hadamard(&self.nodes[*b].value)?)?;
                accumulate(grads, *b, g.hadamard(&self.nodes[*a].value)?)?;
            }
            Op::Div(a, b) => {
                let bv = &self.nodes[*b].value;
                accumulate(grads, *a, g.zip(bv, |gv, b| gv / b)?)?;
                let av = &self.nodes[*a].value;
                let db = g
                    .zip(av, |gv, a| gv * a)?
                    .zip(bv, |num, b| -num / (b * b))?;
                accumulate(grads, *b, db)?;
            }
            Op::AddRowVec(x, v) => {
                accumulate(grads, *x, g.clone())?;
                accumulate(grads, *v, sum_rows(g))?;
            }
            Op::RepeatRows(v) => {
                accumulate(grads, *v, sum_rows(g))?;
            }
            Op::MulColVec(x, v) => {
                let vm = &self.nodes[*v].value;
                let mut dx = g.clone();
                for r in 0..dx.rows() {
                    let s = vm.get(r, 0);
                    for c in 0..dx.cols() {
                        let val = dx.get(r, c) * s;
                        dx.set(r, c, val);
                    }
                }
                accumulate(grads, *x, dx)?;
                let xm = &self.nodes[*x].value;
                let mut dv = Matrix::zeros(xm.rows(), 1);
                for r in 0..xm.rows() {
                    let mut acc = 0.0;
                    for c in 0..xm.cols() {
                        acc += g.get(r, c) * xm.get(r, c);
                    }
                    dv.set(r, 0, acc);
                }
                accumulate(grads, *v, dv)?;
            }
            Op::MulRowVec(x, v) => {
                let vm = &self.nodes[*v].value;
                let mut dx = g.clone();
                for r in 0..dx.rows() {
                    for c in 0..dx.cols() {
                        let val = dx.get(r, c) * vm.get(0, c);
                        dx.set(r, c, val);
                    }
                }
                accumulate(grads, *x, dx)?;
                let xm = &self.nodes[*x].value;
                let mut dv = Matrix::zeros(1, xm.cols());
                for r in 0..xm.rows() {
                    for c in 0..xm.cols() {
                        let val = dv.get(0, c) + g.get(r, c) * xm.get(r, c);
                        dv.set(0, c, val);
                    }
                }
                accumulate(grads, *v, dv)?;
            }
            Op::SubScalar(x, s) => {
                accumulate(grads, *x, g.clone())?;
                let total: f64 = g.data().iter().sum();
                accumulate(grads, *s, Matrix::filled(1, 1, -total))?;
            }
            Op::Scale(x, c) => {
                accumulate(grads, *x, g.scale(*c))?;
            }
            Op::AddConst(x) => {
                accumulate(grads, *x, g.clone())?;
            }
            Op::Elem(op, x) => {
                let xv = &self.nodes[*x].value;
                let yv = &node.value;
                let dx = match op {
                    ElemOp::Sigmoid => g.zip(yv, |gv, y| gv * y * (1.0 - y))?,
                    ElemOp::Relu => g.zip(xv, |gv, x| if x > 0.0 { gv } else { 0.0 })?,
                    ElemOp::Tanh => g.zip(yv, |gv, y| gv * (1.0 - y * y))?,
                    ElemOp::Log => g.zip(xv, |gv, x| gv / x)?,
                    ElemOp::Exp => g.zip(yv, |gv, y| gv * y)?,
                    ElemOp::Square => g.zip(xv, |gv, x| gv * 2.0 * x)?,
                    ElemOp::Negate => g.scale(-1.0),
                };
                accumulate(grads, *x, dx)?;
            }
            Op::Sqrt(x) => {
                let dx = g.zip(&node.value, |gv, y| if y > 0.0 { gv / (2.0 * y) } else { 0.0 })?;
                accumulate(grads, *x, dx)?;
            }
            Op::InvSqrtOrZero(x) => {
                let xv = &self.nodes[*x].value;
                let dx = g.zip(xv, |gv, x| {
                    if x > 0.0 {
                        gv * (-0.5) * x.powf(-1.5)
                    } else {
                        0.0
                    }
                })?;
                accumulate(grads, *x, dx)?;
            }
            Op::RecipOrZero(x) => {
                let xv = &self.nodes[*x].value;
                let dx = g.zip(xv, |gv, x| if x > 0.0 { -gv / (x * x) } else { 0.0 })?;
                accumulate(grads, *x, dx)?;
            }
            Op::Clamp(x, lo, hi) => {
                let xv = &self.nodes[*x].value;
                let dx = g.zip(xv, |gv, x| if x >= *lo && x <= *hi { gv } else { 0.0 })?;
                accumulate(grads, *x, dx)?;
            }
            Op::Min(a, b) => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let mut da = Matrix::zeros(g.rows(), g.cols());
                let mut db = Matrix::zeros(g.rows(), g.cols());
                for idx in 0..g.len() {
                    if av.data()[idx] <= bv.data()[idx] {
                        da.data_mut()[idx] = g.data()[idx];
                    } else {
                        db.data_mut()[idx] = g.data()[idx];
                    }
                }
                accumulate(grads, *a, da)?;
                accumulate(grads, *b, db)?;
            }
            Op::StraightThrough(x) => {
                accumulate(grads, *x, g.clone())?;
            }
            Op::Reduce(op, axis, x) => {
                let xv = &self.nodes[*x].value;
                let (rows, cols) = (xv.rows(), xv.cols());
                let denom = match op {
                    ReduceOp::Sum => 1.0,
                    ReduceOp::Mean => match axis {
                        Axis::Cols => cols as f64,
                        Axis::Rows => rows as f64,
                        Axis::All => (rows * cols) as f64,
                    },
                };
                let mut dx = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    for c in 0..cols {
                        let gv = match axis {
                            Axis::Cols => g.get(r, 0),
                            Axis::Rows => g.get(0, c),
                            Axis::All => g.get(0, 0),
                        };
                        dx.set(r, c, gv / denom);
                    }
                }
                accumulate(grads, *x, dx)?;
            }
            Op::Transpose(x) => {
                accumulate(grads, *x, g.transpose())?;
            }
            Op::ConcatCols(a, b) => {
                let (ac, bc) = (self.nodes[*a].value.cols(), self.nodes[*b].value.cols());
                let rows = g.rows();
                let mut da = Matrix::zeros(rows, ac);
                let mut db = Matrix::zeros(rows, bc);
                for r in 0..rows {
                    for c in 0..ac {
                        da.set(r, c, g.get(r, c));
                    }
                    for c in 0..bc {
                        db.set(r, c, g.get(r, ac + c));
                    }
                }
                accumulate(grads, *a, da)?;
                accumulate(grads, *b, db)?;
            }
            Op::GatherCols(x, idx) => {
                let xv = &self.nodes[*x].value;
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for (r, &c) in idx.iter().enumerate() {
                    dx.set(r, c, g.get(r, 0));
                }
                accumulate(grads, *x, dx)?;
            }
            Op::LogSoftmaxRows(x) => {
                // dx = g - softmax(x) * rowsum(g)
                let yv = &node.value;
                let mut dx = g.clone();
                for r in 0..dx.rows() {
                    let row_sum: f64 = g.row(r).iter().sum();
                    for c in 0..dx.cols() {
                        let val = dx.get(r, c) - yv.get(r, c).exp() * row_sum;
                        dx.set(r, c, val);
                    }
                }
                accumulate(grads, *x, dx)?;
            }
        }
        Ok(())
    }
}

fn sum_rows(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols());
    for r in 0..g.rows() {
        for c in 0..g.cols() {
            let val = out.get(0, c) + g.get(r, c);
            out.set(0, c, val);
        }
    }
    out
}

fn accumulate(grads: &mut [Option<Matrix>], idx: usize, delta: Matrix) -> Result<(), DiffError> {
    match &mut grads[idx] {
        Some(existing) => {
            if !existing.same_shape(&delta) {
                return Err(DiffError::Shape("gradient shape mismatch during accumulation".into()));
            }
            for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
    Ok(())
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v` (zeros if `v` did not
    /// participate in the loss).
    pub fn wrt(&self, v: Var) -> Matrix {
        let Var(i) = v;
        match &self.grads[i] {
            Some(g) => g.clone(),
            None => Matrix::zeros(self.shapes[i].0, self.shapes[i].1),
        }
    }
}
