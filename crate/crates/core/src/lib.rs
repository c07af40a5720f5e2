//! Window-state prediction from indoor climate time series with sparse
//! (L1-regularized) feed-forward networks.
//!
//! Pipeline: [`dataset`] (CSV and synthetic office data) → [`stacking`]
//! (sliding windows into flat input vectors) → [`network`] / [`training`]
//! → [`evaluation`] and [`analysis`].
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the two instantiations.

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod network;
pub mod scalar;
pub mod stacking;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

// ndarray's `blas` feature only declares the cblas symbols; this pulls in
// the system library that provides them.
#[cfg(feature = "openblas")]
#[link(name = "openblas")]
extern "C" {}

pub type Mlp64 = network::Mlp<f64>;
pub type Mlp32 = network::Mlp<f32>;
pub type SampleSet64 = stacking::SampleSet<f64>;
pub type SampleSet32 = stacking::SampleSet<f32>;
pub type Normalizer64 = stacking::Normalizer<f64>;
pub type Normalizer32 = stacking::Normalizer<f32>;
pub type PreparedSplits64 = training::PreparedSplits<f64>;
pub type PreparedSplits32 = training::PreparedSplits<f32>;
