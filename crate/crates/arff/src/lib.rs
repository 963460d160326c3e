//! Adaptive resampling of random Fourier features.
//!
//! A shallow model `beta(x) = sum_k amp_k exp(i nu_k . x)` is fit by
//! Tikhonov-regularized least squares while the frequencies `nu_k` are moved
//! by an alternating loop of random-walk proposals, amplitude fits, and
//! multinomial resampling weighted by aggregated amplitude magnitudes. The
//! loop drives the empirical frequency distribution toward the density
//! proportional to the target's Fourier coefficient magnitudes, which
//! minimizes the rate constant in the `O(1/K)` generalization bound.
//!
//! Module map:
//! - [`model`]: frequencies, amplitudes, datasets, error metrics.
//! - [`linalg`]: matrix-free CG, dense oracle, Newton for the quartic term.
//! - [`sampler`]: aggregation, cutoff distributions, resampling, walks.
//! - [`targets`]: synthetic targets, dataset generation, Fourier oracle.
//! - [`trainer`]: the three training loops with per-iteration metrics.
//! - [`classify`]: MNIST one-vs-all cos/sin networks.
//! - [`output`]: CSV serialization with atomic writes.
//! - [`config`]: INI-style run configuration.
//! - [`experiments`]: named presets at desk and full scale.

pub mod classify;
pub mod config;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod model;
pub mod output;
pub mod rng;
pub mod sampler;
pub mod targets;
pub mod trainer;

pub use error::{Error, Result};
