//! Desk-scale execution model: a shared market-context encoder feeding
//! per-step allocation networks that schedule order execution against
//! VWAP/TWAP benchmarks across a grid of scenarios (buy/sell, volume/notional,
//! minimum execution period), trained end-to-end on a benchmark-slippage
//! objective.
//!
//! The crate is organized as a pipeline:
//!
//! - [`market`] ingests or synthesizes candles and engineers leakage-safe
//!   features windowed into batches;
//! - [`encoder`] turns feature windows into a causal per-position context
//!   (per-feature embeddings, variable selection, a spline-based recurrent
//!   block, masked multi-head attention);
//! - [`decision`] converts context plus execution state into constrained
//!   per-step allocations that conserve the order budget exactly;
//! - [`objective`] scores allocations against benchmarks with differentiable
//!   masks and produces the training loss;
//! - [`train`] owns the optimizer, schedule and gradient verification;
//! - [`eval`] simulates hard-decision execution and emits slippage reports.
//!
//! Everything differentiable runs on the in-crate reverse-mode tape in
//! [`graph`], generic over [`real::Real`] so training can run in single
//! precision while verification runs in double.

pub mod config;
pub mod decision;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod guide;
pub mod market;
pub mod model;
pub mod objective;
pub mod params;
pub mod real;
pub mod tensor;
pub mod train;

pub use error::{LemError, Result};
pub use graph::{Graph, NodeId, SplineGrid};
pub use model::{LemModel, ModelConfig};
pub use real::{Precision, Real};
pub use tensor::Tensor;
