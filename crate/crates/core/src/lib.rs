#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Latent kernel models for undirected graphs with measurable and targetable
//! representational capacity.
//!
//! A model holds a rank-capped factor in SVD form `L = Q diag(σ)` and defines
//! the trace-normalized kernel `K = N·LLᵀ/tr(LLᵀ)`. Edges follow a logistic
//! model on `a_i + a_j + β K_ij`. The normalized spectrum of `K` is a
//! distribution over latent modes whose exponentiated Shannon entropy,
//! `d_spec`, measures the realized dimension. Training adds `−η·log d_spec`
//! to the loss so that `η` shapes that dimension; [`calibrate`] finds the `η`
//! that hits a requested value, [`spectral`] extracts optimal nested prefixes
//! of a fitted kernel, and [`frontier`] traces performance against capacity.

pub mod adam;
pub mod calibrate;
pub mod error;
pub mod eval;
pub mod frontier;
pub mod graph;
pub mod model;
pub mod objective;
pub mod rng;
pub mod sbm;
pub mod spectral;
pub mod study;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
pub use graph::{EdgeSplit, Graph, Pair};
pub use model::ModelParams;
pub use spectral::Spectrum;
