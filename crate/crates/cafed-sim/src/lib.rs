//! Simulator for federated learning under heterogeneous and temporally
//! correlated client availability.
//!
//! Client availability is modeled by independent two-state Markov chains.
//! The library provides:
//!
//! - [`availability`]: chain construction, spectral analysis, and seeded
//!   trace sampling;
//! - [`data`]: a synthetic binary-classification federation and an MNIST
//!   loader with label-swap heterogeneity;
//! - [`model`]: ridge-regularized linear classifiers with full-batch
//!   minimization oracles;
//! - [`engine`]: the availability-gated federated training loop with
//!   pluggable aggregation strategies;
//! - [`cafed`]: the correlation-aware CA-Fed strategy and its server-side
//!   estimators;
//! - [`bounds`]: numerical evaluation of the error decompositions and the
//!   convex aggregation-weight optimizer;
//! - [`harness`]: configuration, presets, metrics, and the CLI entry point.
//!
//! See the crate `examples/` directory for runnable entry points covering
//! each capability, or run the `cafed` binary.

pub mod availability;
pub mod bounds;
pub mod cafed;
pub mod data;
pub mod engine;
pub mod error;
pub mod harness;
pub mod model;

pub use error::{Error, Result};
