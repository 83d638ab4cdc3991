//! Stochastic hyperedge sampling, incidence structures, hypergraph
//! convolution, and skewness statistics.
//!
//! Randomness is owned by the caller: sampling takes an explicit noise
//! matrix, so every function here is a pure transformation.

use crate::diffnum::{Axis, DiffError, Matrix, ReduceOp, Tape, Var};

/// Bernoulli parameters are clamped into [EPS_P, 1 - EPS_P] so their
/// logits stay finite.
pub const EPS_P: f64 = 1e-6;

/// Degree spreads below this are treated as degenerate (skewness 0).
pub const SKEW_STD_FLOOR: f64 = 1e-8;

/// Noise distribution driving the relaxed Bernoulli sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// eps = log(-log u). Hardened samples fire with probability
    /// exp(-(1-p)/p), which undershoots p.
    Gumbel,
    /// eps = log u - log(1-u). Hardened samples fire with probability
    /// exactly p.
    Logistic,
}

impl NoiseKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gumbel" => Some(NoiseKind::Gumbel),
            "logistic" => Some(NoiseKind::Logistic),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Gumbel => "gumbel",
            NoiseKind::Logistic => "logistic",
        }
    }
}

/// N x M matrix of per-(agent, hyperedge) Bernoulli membership parameters.
#[derive(Debug, Clone)]
pub struct HyperedgeProbMatrix {
    p: Matrix,
}

impl HyperedgeProbMatrix {
    /// Clamps every entry into [EPS_P, 1 - EPS_P] on construction.
    pub fn new(p: Matrix) -> Self {
        let clamped = p.map(|v| v.clamp(EPS_P, 1.0 - EPS_P));
        HyperedgeProbMatrix { p: clamped }
    }

    pub fn n_agents(&self) -> usize {
        self.p.rows()
    }

    pub fn n_hyperedges(&self) -> usize {
        self.p.cols()
    }

    pub fn p(&self) -> &Matrix {
        &self.p
    }
}

/// Differentiable sample before hardening: entries strictly in (0, 1).
#[derive(Debug, Clone)]
pub struct RelaxedIncidence {
    pub y: Matrix,
    pub tau: f64,
    pub noise: Matrix,
}

/// Binary incidence with cached vertex degrees `d` (row sums) and
/// hyperedge degrees `b` (column sums).
#[derive(Debug, Clone)]
pub struct Incidence {
    pub h: Matrix,
    pub d: Vec<f64>,
    pub b: Vec<f64>,
}

impl Incidence {
    pub fn from_binary(h: Matrix) -> Self {
        let (n, m) = (h.rows(), h.cols());
        let mut d = vec![0.0; n];
        let mut b = vec![0.0; m];
        for r in 0..n {
            for c in 0..m {
                let v = h.get(r, c);
                d[r] += v;
                b[c] += v;
            }
        }
        Incidence { h, d, b }
    }
}

/// eps = log(-log u), with u clamped into [1e-12, 1 - 1e-12].
pub fn gumbel_noise(u: &Matrix) -> Result<Matrix, DiffError> {
    let out = u.map(|v| {
        let v = v.clamp(1e-12, 1.0 - 1e-12);
        (-v.ln()).ln()
    });
    if !out.all_finite() {
        return Err(DiffError::NonFinite("gumbel noise produced non-finite entries".into()));
    }
    Ok(out)
}

/// eps = log u - log(1-u), with u clamped into [1e-12, 1 - 1e-12].
pub fn logistic_noise(u: &Matrix) -> Result<Matrix, DiffError> {
    let out = u.map(|v| {
        let v = v.clamp(1e-12, 1.0 - 1e-12);
        v.ln() - (1.0 - v).ln()
    });
    if !out.all_finite() {
        return Err(DiffError::NonFinite("logistic noise produced non-finite entries".into()));
    }
    Ok(out)
}

/// Noise transform selected by kind.
pub fn noise_from_uniform(kind: NoiseKind, u: &Matrix) -> Result<Matrix, DiffError> {
    match kind {
        NoiseKind::Gumbel => gumbel_noise(u),
        NoiseKind::Logistic => logistic_noise(u),
    }
}

/// y = sigmoid((log p - log(1-p) + eps) / tau), entrywise.
pub fn relaxed_sample(
    p: &HyperedgeProbMatrix,
    noise: &Matrix,
    tau: f64,
) -> Result<RelaxedIncidence, DiffError> {
    if tau <= 0.0 {
        return Err(DiffError::Domain(format!("temperature must be positive, got {tau}")));
    }
    let y = p.p().zip(noise, |pv, e| {
        let logit = pv.ln() - (1.0 - pv).ln();
        sigmoid((logit + e) / tau)
    })?;
    Ok(RelaxedIncidence { y, tau, noise: noise.clone() })
}

/// Tape counterpart of [`relaxed_sample`]: differentiable w.r.t. `p` with
/// the noise held fixed.
pub fn relaxed_sample_tape(
    tape: &mut Tape,
    p: Var,
    noise: &Matrix,
    tau: f64,
) -> Result<Var, DiffError> {
    if tau <= 0.0 {
        return Err(DiffError::Domain(format!("temperature must be positive, got {tau}")));
    }
    let log_p = tape.log(p)?;
    let negated = tape.negate(p);
    let one_minus_p = tape.add_const(negated, 1.0);
    let log_1mp = tape.log(one_minus_p)?;
    let logit = tape.sub(log_p, log_1mp)?;
    let noise_leaf = tape.leaf(noise.clone());
    let perturbed = tape.add(logit, noise_leaf)?;
    let scaled = tape.scale(perturbed, 1.0 / tau);
    Ok(tape.sigmoid(scaled))
}

/// Threshold at 0.5 (ties round up) and compute degree vectors.
pub fn harden(relaxed: &RelaxedIncidence) -> Incidence {
    let h = relaxed.y.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
    Incidence::from_binary(h)
}

/// Hypergraph convolution: ReLU(D^(-1/2) H B^(-1) H^T D^(-1/2) X Theta).
/// Zero degrees use the 0 -> 0 pseudo-inverse convention, so isolated
/// vertices produce zero rows and empty hyperedges are inert.
pub fn hgcn_layer(h: &Incidence, x: &Matrix, theta: &Matrix) -> Result<Matrix, DiffError> {
    let (n, m) = (h.h.rows(), h.h.cols());
    if x.rows() != n {
        return Err(DiffError::Shape(format!("hgcn features {}x{} vs {n} vertices", x.rows(), x.cols())));
    }
    let d_inv_sqrt: Vec<f64> =
        h.d.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
    let b_inv: Vec<f64> = h.b.iter().map(|&b| if b > 0.0 { 1.0 / b } else { 0.0 }).collect();

    // A = D^(-1/2) H; C = A B^(-1); operator = C A^T
    let mut a = h.h.clone();
    for r in 0..n {
        for c in 0..m {
            let v = a.get(r, c) * d_inv_sqrt[r];
            a.set(r, c, v);
        }
    }
    let mut c_mat = a.clone();
    for r in 0..n {
        for c in 0..m {
            let v = c_mat.get(r, c) * b_inv[c];
            c_mat.set(r, c, v);
        }
    }
    let operator = c_mat.matmul(&a.transpose())?;
    let mixed = operator.matmul(x)?.matmul(theta)?;
    Ok(mixed.map(|v| v.max(0.0)))
}

/// Tape counterpart of [`hgcn_layer`]. Degrees are recomputed on the tape
/// from `h`, so gradients reach `h` through the normalization as well.
pub fn hgcn_layer_tape(tape: &mut Tape, h: Var, x: Var, theta: Var) -> Result<Var, DiffError> {
    let d = tape.reduce(ReduceOp::Sum, h, Axis::Cols)?; // Nx1 vertex degrees
    let b = tape.reduce(ReduceOp::Sum, h, Axis::Rows)?; // 1xM hyperedge degrees
    let d_inv_sqrt = tape.inv_sqrt_or_zero(d);
    let b_inv = tape.recip_or_zero(b);
    let a = tape.mul_col_vec(h, d_inv_sqrt)?;
    let c = tape.mul_row_vec(a, b_inv)?;
    let a_t = tape.transpose(a);
    let operator = tape.matmul(c, a_t)?;
    let mixed = tape.matmul(operator, x)?;
    let mixed = tape.matmul(mixed, theta)?;
    Ok(tape.relu(mixed))
}

/// Degree-spread statistic: the squashed third standardized moment of the
/// hyperedge degrees, in (-1, 1). Zero spread returns 0.
pub fn skewness(b: &[f64]) -> f64 {
    let n = b.len() as f64;
    if b.is_empty() {
        return 0.0;
    }
    let mean = b.iter().sum::<f64>() / n;
    let m2 = b.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if m2.sqrt() < SKEW_STD_FLOOR {
        return 0.0;
    }
    let m3 = b.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let gamma = m3 / m2.powf(1.5);
    2.0 * sigmoid(gamma) - 1.0
}

/// Squared deviation from the target skewness.
pub fn skewness_loss(sk: f64, lambda_sk: f64) -> f64 {
    (sk - lambda_sk).powi(2)
}

/// Skewness of the relaxed hyperedge degrees (column sums of `y`), built
/// on the tape so it can drive the generator. Returns a 1x1 variable.
/// Falls back to a constant 0 in the zero-spread regime, mirroring
/// [`skewness`].
pub fn relaxed_skewness_tape(tape: &mut Tape, y: Var) -> Result<Var, DiffError> {
    let degrees = tape.reduce(ReduceOp::Sum, y, Axis::Rows)?; // 1xM
    degree_skewness_tape(tape, degrees)
}

/// Skewness of an already-reduced 1xM degree vector on the tape.
pub fn degree_skewness_tape(tape: &mut Tape, degrees: Var) -> Result<Var, DiffError> {
    let mean = tape.reduce(ReduceOp::Mean, degrees, Axis::All)?;
    let centered = tape.sub_scalar(degrees, mean)?;
    let sq = tape.square(centered);
    let m2 = tape.mean_all(sq)?;
    if tape.value(m2).scalar()?.sqrt() < SKEW_STD_FLOOR {
        return Ok(tape.leaf(Matrix::filled(1, 1, 0.0)));
    }
    let cubed = tape.mul(sq, centered)?;
    let m3 = tape.mean_all(cubed)?;
    let sqrt_m2 = tape.sqrt(m2)?;
    let denom = tape.mul(sqrt_m2, m2)?; // m2^(3/2)
    let gamma = tape.div(m3, denom)?;
    let sig = tape.sigmoid(gamma);
    let doubled = tape.scale(sig, 2.0);
    Ok(tape.add_const(doubled, -1.0))
}

/// (Sk - lambda)^2 on the tape.
pub fn skewness_loss_tape(tape: &mut Tape, sk: Var, lambda_sk: f64) -> Result<Var, DiffError> {
    let deviation = tape.add_const(sk, -lambda_sk);
    Ok(tape.square(deviation))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
