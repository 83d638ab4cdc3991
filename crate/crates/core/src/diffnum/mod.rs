//! Dense-matrix numerical substrate with reverse-mode differentiation.
//!
//! Everything downstream (hypergraph layers, networks, losses) is built
//! from the small fixed op set here. Values are `f64`; one [`Tape`]
//! records one forward pass and replays it backward for gradients.

mod gradcheck;
mod matrix;
mod tape;

pub use gradcheck::grad_check;
pub use matrix::{elementwise, matmul, reduce, Matrix};
pub use tape::{Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

/// Entrywise nonlinearities available on matrices and tapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemOp {
    Sigmoid,
    Relu,
    Tanh,
    Log,
    Exp,
    Square,
    Negate,
}

impl ElemOp {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            ElemOp::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            ElemOp::Relu => v.max(0.0),
            ElemOp::Tanh => v.tanh(),
            ElemOp::Log => v.ln(),
            ElemOp::Exp => v.exp(),
            ElemOp::Square => v * v,
            ElemOp::Negate => -v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
}

/// Reduction axis. `Cols` collapses each row to one value (Nx1 result),
/// `Rows` collapses each column (1xM result), `All` collapses to 1x1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
    All,
}
