//! Parameterized networks: observation encoder, recurrent hyperedge
//! generator, two-layer hypergraph convolution stack, actor policy, and
//! centralized critic.
//!
//! All forward passes are built on a [`Tape`], so the same code serves
//! rollout (values only) and training (values plus gradients). Weights are
//! shared across agents; agents appear only as matrix rows.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointError, MAGIC};

use crate::diffnum::{DiffError, Matrix, Tape, Var};
use crate::hypergraph::EPS_P;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// Recurrent layers in the hyperedge generator.
pub const GEN_LAYERS: usize = 3;
/// Hypergraph convolution layers in the critic pipeline.
pub const HGCN_LAYERS: usize = 2;
/// Log-probabilities are clamped from below at ln of this.
pub const EPS_LOGPROB: f64 = 1e-8;

/// Shape-determining configuration for every network in a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub obs_dim: usize,
    pub global_dim: usize,
    pub hidden_dim: usize,
    pub n_hyperedges: usize,
    pub n_actions: usize,
}

impl NetConfig {
    /// Declared parameter layout: (name, rows, cols) in serialization order.
    pub fn layout(&self) -> Vec<(String, usize, usize)> {
        let (o, s, h, m, a) =
            (self.obs_dim, self.global_dim, self.hidden_dim, self.n_hyperedges, self.n_actions);
        let mut out = vec![
            ("enc.w".into(), o, h),
            ("enc.b".into(), 1, h),
        ];
        for layer in 0..GEN_LAYERS {
            let input = if layer == 0 { o } else { h };
            out.push((format!("gen.l{layer}.wx"), input, h));
            out.push((format!("gen.l{layer}.wh"), h, h));
            out.push((format!("gen.l{layer}.b"), 1, h));
        }
        out.push(("gen.head.w".into(), h, m));
        out.push(("gen.head.b".into(), 1, m));
        for layer in 0..HGCN_LAYERS {
            out.push((format!("hgcn.l{layer}.w"), h, h));
        }
        out.extend([
            ("critic.embed.w".into(), s, h),
            ("critic.embed.b".into(), 1, h),
            ("critic.fc1.w".into(), 2 * h, h),
            ("critic.fc1.b".into(), 1, h),
            ("critic.fc2.w".into(), h, h),
            ("critic.fc2.b".into(), 1, h),
            ("critic.head.w".into(), h, 1),
            ("critic.head.b".into(), 1, 1),
            ("actor.fc1.w".into(), o, h),
            ("actor.fc1.b".into(), 1, h),
            ("actor.fc2.w".into(), h, h),
            ("actor.fc2.b".into(), 1, h),
            ("actor.head.w".into(), h, a),
            ("actor.head.b".into(), 1, a),
        ]);
        out
    }
}

/// One named parameter matrix with its gradient slot.
#[derive(Debug, Clone)]
pub struct NamedParam {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

/// Ordered collection of all network parameters for one run.
#[derive(Debug, Clone)]
pub struct ParamSet {
    cfg: NetConfig,
    entries: Vec<NamedParam>,
}

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Uniform in +-sqrt(6/(fan_in+fan_out)); zero biases; recurrent
    /// state-to-state matrices orthogonalized.
    XavierUniform,
}

impl ParamSet {
    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn entries(&self) -> &[NamedParam] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [NamedParam] {
        &mut self.entries
    }

    pub fn get(&self, name: &str) -> &Matrix {
        &self
            .entries
            .iter()
            .find(|e| e.name == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .value
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Matrix {
        &mut self
            .entries
            .iter_mut()
            .find(|e| e.name == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .value
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            for g in e.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    /// Indices of actor-head parameters.
    pub fn actor_indices(&self) -> Vec<usize> {
        self.indices_with_prefix("actor.")
    }

    /// Indices of every critic-side parameter (encoder, generator,
    /// convolution stack, value head) — the set covered by the target copy.
    pub fn critic_side_indices(&self) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| !e.name.starts_with("actor."))
            .map(|(i, _)| i)
            .collect()
    }

    /// Indices of the hypergraph-generator subset.
    pub fn generator_indices(&self) -> Vec<usize> {
        self.indices_with_prefix("gen.")
    }

    fn indices_with_prefix(&self, prefix: &str) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.name.starts_with(prefix))
            .map(|(i, _)| i)
            .collect()
    }

    /// Overwrite values from a saved (name, matrix) list; names, order,
    /// and shapes must match the declared layout exactly.
    pub fn load_values(&mut self, saved: &[(String, Matrix)]) -> Result<(), CheckpointError> {
        if saved.len() != self.entries.len() {
            return Err(CheckpointError::Layout(format!(
                "expected {} parameters, found {}",
                self.entries.len(),
                saved.len()
            )));
        }
        for (entry, (name, value)) in self.entries.iter_mut().zip(saved) {
            if &entry.name != name {
                return Err(CheckpointError::Layout(format!(
                    "expected parameter {}, found {name}",
                    entry.name
                )));
            }
            if !entry.value.same_shape(value) {
                return Err(CheckpointError::Layout(format!(
                    "parameter {name}: expected {}x{}, found {}x{}",
                    entry.value.rows(),
                    entry.value.cols(),
                    value.rows(),
                    value.cols()
                )));
            }
            entry.value = value.clone();
        }
        Ok(())
    }
}

/// Deterministically initialize all parameters for `cfg` from a seed.
pub fn init_params(cfg: &NetConfig, seed: u64, scheme: InitScheme) -> ParamSet {
    let InitScheme::XavierUniform = scheme;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let entries = cfg
        .layout()
        .into_iter()
        .map(|(name, rows, cols)| {
            let value = if name.ends_with(".b") {
                Matrix::zeros(rows, cols)
            } else {
                let bound = (6.0 / (rows + cols) as f64).sqrt();
                let mut m = Matrix::zeros(rows, cols);
                for v in m.data_mut() {
                    *v = (rng.gen::<f64>() * 2.0 - 1.0) * bound;
                }
                if name.ends_with(".wh") {
                    m = orthogonalize(&m);
                }
                m
            };
            let grad = Matrix::zeros(rows, cols);
            NamedParam { name, value, grad }
        })
        .collect();
    ParamSet { cfg: cfg.clone(), entries }
}

/// Modified Gram-Schmidt over columns; near-dependent columns fall back to
/// unit vectors so the result is always orthonormal.
fn orthogonalize(m: &Matrix) -> Matrix {
    let n = m.rows();
    debug_assert_eq!(n, m.cols());
    let mut cols: Vec<Vec<f64>> = (0..n).map(|c| (0..n).map(|r| m.get(r, c)).collect()).collect();
    for j in 0..n {
        for i in 0..j {
            let dot: f64 = (0..n).map(|r| cols[i][r] * cols[j][r]).sum();
            for r in 0..n {
                cols[j][r] -= dot * cols[i][r];
            }
        }
        let norm: f64 = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-10 {
            for (r, v) in cols[j].iter_mut().enumerate() {
                *v = if r == j { 1.0 } else { 0.0 };
            }
        } else {
            for v in &mut cols[j] {
                *v /= norm;
            }
        }
    }
    let mut out = Matrix::zeros(n, n);
    for (c, col) in cols.iter().enumerate() {
        for (r, v) in col.iter().enumerate() {
            out.set(r, c, *v);
        }
    }
    out
}

/// Lazy binding of parameters onto one tape: each parameter becomes a leaf
/// at most once per tape, and the bound vars can be walked afterwards to
/// pull gradients back into the set.
pub struct TapeBinding<'a> {
    set: &'a ParamSet,
    vars: Vec<Option<Var>>,
}

impl<'a> TapeBinding<'a> {
    pub fn new(set: &'a ParamSet) -> Self {
        TapeBinding { vars: vec![None; set.entries.len()], set }
    }

    pub fn var(&mut self, tape: &mut Tape, name: &str) -> Var {
        let idx = self
            .set
            .entries
            .iter()
            .position(|e| e.name == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        *self.vars[idx].get_or_insert_with(|| tape.leaf(self.set.entries[idx].value.clone()))
    }

    /// (parameter index, bound var) for every parameter touched on the tape.
    pub fn bound(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.vars.iter().enumerate().filter_map(|(i, v)| v.map(|var| (i, var)))
    }
}

/// Per-layer recurrent hidden state of the generator, one row per agent.
#[derive(Debug, Clone)]
pub struct GeneratorState {
    pub layers: Vec<Matrix>,
}

impl GeneratorState {
    pub fn zeros(n_agents: usize, hidden_dim: usize) -> Self {
        GeneratorState {
            layers: (0..GEN_LAYERS).map(|_| Matrix::zeros(n_agents, hidden_dim)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(Matrix::all_finite)
    }
}

/// relu(obs W + b): the shared observation encoder producing the
/// convolution stack's input features.
pub fn encode_obs_tape(
    tape: &mut Tape,
    params: &mut TapeBinding,
    obs: Var,
) -> Result<Var, DiffError> {
    let w = params.var(tape, "enc.w");
    let b = params.var(tape, "enc.b");
    let lin = tape.matmul(obs, w)?;
    let lin = tape.add_row_vec(lin, b)?;
    Ok(tape.relu(lin))
}

/// Three stacked tanh recurrent layers over each agent's observation
/// (shared weights) followed by a sigmoid head emitting that agent's row
/// of the hyperedge probability matrix. Returns the clamped probability
/// matrix and the new hidden state values.
pub fn generator_forward_tape(
    tape: &mut Tape,
    params: &mut TapeBinding,
    obs: Var,
    state: &GeneratorState,
) -> Result<(Var, GeneratorState), DiffError> {
    if state.layers.len() != GEN_LAYERS {
        return Err(DiffError::Shape(format!(
            "generator state has {} layers, expected {GEN_LAYERS}",
            state.layers.len()
        )));
    }
    let mut input = obs;
    let mut new_layers = Vec::with_capacity(GEN_LAYERS);
    for (layer, prev_hidden) in state.layers.iter().enumerate() {
        let wx = params.var(tape, &format!("gen.l{layer}.wx"));
        let wh = params.var(tape, &format!("gen.l{layer}.wh"));
        let b = params.var(tape, &format!("gen.l{layer}.b"));
        let prev = tape.leaf(prev_hidden.clone());
        let from_input = tape.matmul(input, wx)?;
        let from_state = tape.matmul(prev, wh)?;
        let summed = tape.add(from_input, from_state)?;
        let summed = tape.add_row_vec(summed, b)?;
        let hidden = tape.tanh(summed);
        new_layers.push(tape.value(hidden).clone());
        input = hidden;
    }
    let head_w = params.var(tape, "gen.head.w");
    let head_b = params.var(tape, "gen.head.b");
    let logits = tape.matmul(input, head_w)?;
    let logits = tape.add_row_vec(logits, head_b)?;
    let raw = tape.sigmoid(logits);
    let p = tape.clamp(raw, EPS_P, 1.0 - EPS_P);
    let new_state = GeneratorState { layers: new_layers };
    if !new_state.all_finite() {
        return Err(DiffError::NonFinite("generator hidden state diverged".into()));
    }
    Ok((p, new_state))
}

/// Per-agent state values V_i from the aggregated messages and an embedded
/// global state: two shared perceptron layers over [m_i || embed(s)] and a
/// scalar head. Returns an Nx1 variable.
pub fn critic_forward_tape(
    tape: &mut Tape,
    params: &mut TapeBinding,
    messages: Var,
    global_state: Var,
) -> Result<Var, DiffError> {
    let n_agents = tape.value(messages).rows();
    let we = params.var(tape, "critic.embed.w");
    let be = params.var(tape, "critic.embed.b");
    let embed = tape.matmul(global_state, we)?;
    let embed = tape.add_row_vec(embed, be)?;
    let embed_rows = tape.repeat_rows(embed, n_agents)?;
    let joint = tape.concat_cols(messages, embed_rows)?;

    let w1 = params.var(tape, "critic.fc1.w");
    let b1 = params.var(tape, "critic.fc1.b");
    let h1 = tape.matmul(joint, w1)?;
    let h1 = tape.add_row_vec(h1, b1)?;
    let h1 = tape.relu(h1);

    let w2 = params.var(tape, "critic.fc2.w");
    let b2 = params.var(tape, "critic.fc2.b");
    let h2 = tape.matmul(h1, w2)?;
    let h2 = tape.add_row_vec(h2, b2)?;
    let h2 = tape.relu(h2);

    let wh = params.var(tape, "critic.head.w");
    let bh = params.var(tape, "critic.head.b");
    let v = tape.matmul(h2, wh)?;
    tape.add_row_vec(v, bh)
}

/// Row-wise action log-probabilities for a batch of local observations
/// (one agent per row). Softmax happens in log space; the result is exact
/// log-probabilities summing to one per row.
pub fn actor_forward_tape(
    tape: &mut Tape,
    params: &mut TapeBinding,
    obs: Var,
) -> Result<Var, DiffError> {
    let w1 = params.var(tape, "actor.fc1.w");
    let b1 = params.var(tape, "actor.fc1.b");
    let h1 = tape.matmul(obs, w1)?;
    let h1 = tape.add_row_vec(h1, b1)?;
    let h1 = tape.relu(h1);

    let w2 = params.var(tape, "actor.fc2.w");
    let b2 = params.var(tape, "actor.fc2.b");
    let h2 = tape.matmul(h1, w2)?;
    let h2 = tape.add_row_vec(h2, b2)?;
    let h2 = tape.relu(h2);

    let wh = params.var(tape, "actor.head.w");
    let bh = params.var(tape, "actor.head.b");
    let logits = tape.matmul(h2, wh)?;
    let logits = tape.add_row_vec(logits, bh)?;
    Ok(tape.log_softmax_rows(logits))
}

/// Forward-only encoder output.
pub fn encode_obs(params: &ParamSet, obs: &Matrix) -> Result<Matrix, DiffError> {
    let mut tape = Tape::new();
    let mut binding = TapeBinding::new(params);
    let obs_var = tape.leaf(obs.clone());
    let out = encode_obs_tape(&mut tape, &mut binding, obs_var)?;
    Ok(tape.value(out).clone())
}

/// Forward-only generator step.
pub fn generator_forward(
    params: &ParamSet,
    obs: &Matrix,
    state: &GeneratorState,
) -> Result<(crate::hypergraph::HyperedgeProbMatrix, GeneratorState), DiffError> {
    let mut tape = Tape::new();
    let mut binding = TapeBinding::new(params);
    let obs_var = tape.leaf(obs.clone());
    let (p, new_state) = generator_forward_tape(&mut tape, &mut binding, obs_var, state)?;
    Ok((crate::hypergraph::HyperedgeProbMatrix::new(tape.value(p).clone()), new_state))
}

/// Forward-only convolution stack over a hardened incidence.
pub fn hgcn_forward(
    params: &ParamSet,
    incidence: &crate::hypergraph::Incidence,
    features: &Matrix,
) -> Result<Matrix, DiffError> {
    let mut x = features.clone();
    for layer in 0..HGCN_LAYERS {
        x = crate::hypergraph::hgcn_layer(incidence, &x, params.get(&format!("hgcn.l{layer}.w")))?;
    }
    Ok(x)
}

/// Forward-only per-agent values.
pub fn critic_forward(
    params: &ParamSet,
    global_state: &Matrix,
    messages: &Matrix,
) -> Result<Vec<f64>, DiffError> {
    let mut tape = Tape::new();
    let mut binding = TapeBinding::new(params);
    let msg = tape.leaf(messages.clone());
    let gs = tape.leaf(global_state.clone());
    let v = critic_forward_tape(&mut tape, &mut binding, msg, gs)?;
    Ok(tape.value(v).data().to_vec())
}

/// Forward-only categorical action distribution for one agent.
pub fn actor_forward(params: &ParamSet, obs_row: &[f64]) -> Result<Vec<f64>, DiffError> {
    let probs = actor_forward_batch(params, &Matrix::row_vector(obs_row))?;
    Ok(probs.data().to_vec())
}

/// Forward-only action probabilities, one row per agent.
pub fn actor_forward_batch(params: &ParamSet, obs: &Matrix) -> Result<Matrix, DiffError> {
    let mut tape = Tape::new();
    let mut binding = TapeBinding::new(params);
    let obs_var = tape.leaf(obs.clone());
    let lp = actor_forward_tape(&mut tape, &mut binding, obs_var)?;
    Ok(tape.value(lp).map(f64::exp))
}

/// Hex SHA-256 of an arbitrary identity string; used to stamp checkpoints
/// with the configuration that shaped them.
pub fn digest_hex(identity: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(identity.as_bytes());
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}
