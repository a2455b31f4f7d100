//! Stability of graph convolutional networks under random edge sampling.
//!
//! A graph filter is a polynomial in a symmetric shift operator (adjacency,
//! Laplacian, or normalized adjacency). When every edge of the underlying
//! graph survives only with probability `p` per shift application, the filter
//! output deviates from its nominal value. This crate measures that deviation
//! by Monte Carlo simulation and compares it against closed-form first-order
//! bounds of the form `n * alpha * C_L^2 * (1 - p) * ||x||^2`, for both bare
//! filters and multi-layer filter-bank networks (GCNNs).
//!
//! Module layout mirrors the pipeline:
//!
//! * [`graph`]: graphs, shift operators, Jacobi eigendecomposition.
//! * [`filters`]: polynomial filters, frequency responses, Lipschitz bounds.
//! * [`perturbation`]: random edge-sampling model and its moment checks.
//! * [`gcnn`]: filter-bank networks, training, stochastic forward passes.
//! * [`stability`]: Monte Carlo deviation estimates versus theoretical bounds.
//! * [`experiments`]: source-localization datasets, sweeps, CSV output.
//!
//! Everything is deterministic given a seed: sampling streams are derived
//! from `(seed, draw index, chain slot, chain position)` counters, so results
//! do not depend on thread count or evaluation order.

#![forbid(unsafe_code)]

pub mod cli;
pub mod config;
mod error;
pub mod experiments;
pub mod filters;
pub mod gcnn;
pub mod graph;
pub mod numeric;
pub mod perturbation;
pub mod rng;
pub mod stability;

pub use error::{Error, Result};
