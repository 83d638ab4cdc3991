//! Stochastic hypergraph coordination for cooperative multi-agent RL.
//!
//! The crate is organized bottom-up:
//!
//! - [`diffnum`]: dense matrices plus reverse-mode differentiation;
//! - [`hypergraph`]: relaxed Bernoulli hyperedge sampling, incidence
//!   hardening, hypergraph convolution, and degree-skewness statistics;
//! - [`nets`]: the encoder / generator / convolution / actor / critic
//!   parameter set and forward passes;
//! - [`envs`]: two seeded gridworld tasks (formation keeping, warehouse
//!   delivery) with a shared reward and makespan accounting;
//! - [`marl`]: rollout collection, generalized advantage estimation, the
//!   clipped policy objective, the joint value/skewness critic loss, and
//!   the training loop.

pub mod diffnum;
pub mod envs;
pub mod hypergraph;
pub mod marl;
pub mod nets;
