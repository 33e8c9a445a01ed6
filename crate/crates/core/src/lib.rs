//! Full-duplex D2D resource allocation toolkit.
//!
//! Pipeline: generate channel scenarios ([`scenario`]), score allocations
//! ([`rate`]), label samples by exhaustive search ([`allocators`]), build
//! datasets ([`dataset`]), train neural allocators on a small hand-rolled
//! layer engine ([`nn`], [`models`]), and evaluate against the optimal and
//! ERP baselines ([`eval`]).
//!
//! The numeric core is generic over [`scalar::Scalar`] (`f32`/`f64`); the
//! aliases below pin the `f64` instantiation used by the file formats and
//! the CLI.

pub mod allocators;
pub mod dataset;
pub mod eval;
pub mod models;
pub mod nn;
pub mod rate;
pub mod scalar;
pub mod scenario;
pub mod tensor;

pub use scalar::Scalar;

/// Scalar type of the shipped pipeline; all file formats store this width.
pub type Real = f64;

pub type Config = scenario::ScenarioConfig<Real>;
pub type Layout = scenario::UserLayout<Real>;
pub type Csi = scenario::ChannelState<Real>;
pub type Report = rate::RateReport<Real>;
pub type Tensor = tensor::NdArray<Real>;
