//! Dense row-major matrix storage and the forward-only operations on it.

use super::{Axis, DiffError, ElemOp, ReduceOp};

/// Dense matrix of `f64` values in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Build from a row-major data vector. Length must be `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, DiffError> {
        if data.len() != rows * cols {
            return Err(DiffError::Shape(format!(
                "data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Build from nested row slices; rows must have equal lengths.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, DiffError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(DiffError::Shape("ragged row lengths".into()));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { rows: r, cols: c, data })
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Matrix { rows: 1, cols: values.len(), data: values.to_vec() }
    }

    pub fn col_vector(values: &[f64]) -> Self {
        Matrix { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Value of a 1x1 matrix.
    pub fn scalar(&self) -> Result<f64, DiffError> {
        if self.rows == 1 && self.cols == 1 {
            Ok(self.data[0])
        } else {
            Err(DiffError::Shape(format!("expected 1x1, got {}x{}", self.rows, self.cols)))
        }
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Standard matrix product.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, DiffError> {
        if self.cols != other.rows {
            return Err(DiffError::Shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        // i-k-j order keeps the inner loop contiguous in both operands.
        for i in 0..self.rows {
            let a_row = &self.data[i * self.cols..(i + 1) * self.cols];
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix, DiffError> {
        if !self.same_shape(other) {
            return Err(DiffError::Shape(format!(
                "zip {}x{} with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, DiffError> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, DiffError> {
        self.zip(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix, DiffError> {
        self.zip(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|v| v * c)
    }
}

/// Entrywise application of a fixed nonlinearity.
pub fn elementwise(op: ElemOp, x: &Matrix) -> Result<Matrix, DiffError> {
    if op == ElemOp::Log {
        if let Some(v) = x.data().iter().find(|v| **v <= 0.0) {
            return Err(DiffError::Domain(format!("log of non-positive entry {v}")));
        }
    }
    Ok(x.map(|v| op.apply(v)))
}

/// Sum or mean along an axis. `Axis::Cols` reduces across columns (per-row
/// result, shape Nx1); `Axis::Rows` reduces across rows (1xM); `Axis::All`
/// yields 1x1.
pub fn reduce(op: ReduceOp, x: &Matrix, axis: Axis) -> Result<Matrix, DiffError> {
    if x.is_empty() {
        return Err(DiffError::Shape("reduce of empty matrix".into()));
    }
    let (rows, cols) = (x.rows(), x.cols());
    let mut out = match axis {
        Axis::Cols => {
            let mut out = Matrix::zeros(rows, 1);
            for r in 0..rows {
                out.data[r] = x.row(r).iter().sum();
            }
            out
        }
        Axis::Rows => {
            let mut out = Matrix::zeros(1, cols);
            for r in 0..rows {
                for c in 0..cols {
                    out.data[c] += x.get(r, c);
                }
            }
            out
        }
        Axis::All => {
            let mut out = Matrix::zeros(1, 1);
            out.data[0] = x.data().iter().sum();
            out
        }
    };
    if op == ReduceOp::Mean {
        let count = match axis {
            Axis::Cols => cols,
            Axis::Rows => rows,
            Axis::All => rows * cols,
        } as f64;
        for v in &mut out.data {
            *v /= count;
        }
    }
    Ok(out)
}

/// Standard matrix product as a free function, mirroring the tape op.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix, DiffError> {
    a.matmul(b)
}
