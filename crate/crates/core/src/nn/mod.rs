//! Minimal differentiable-layer engine.
//!
//! Shaped arrays live in [`crate::tensor`]; this module adds named trainable
//! parameters with Adam state ([`params`]), forward/backward passes for every
//! layer the allocator models need ([`ops`]), and a finite-difference checker
//! ([`gradcheck`]). Backward passes are hand-derived per layer; there is no
//! autograd graph.

pub mod gradcheck;
pub mod ops;
pub mod params;

use thiserror::Error;

/// Whether stochastic layers (dropout) and batch statistics are live.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch of {0} is too small for train-mode batch norm")]
    DegenerateBatch(usize),
}

pub use params::{ParamEntry, ParameterStore};
