//! Linear stochastic (partial) differential equation models of sea-surface
//! temperature anomalies.
//!
//! The crate computes the first two moments of linear SDE/SPDE models
//! directly (a deterministic mean equation plus a differential Lyapunov
//! equation for the covariance, flowed in low-rank factored form), and
//! provides the comparison baselines: stochastic Galerkin (Wiener chaos) and
//! strong Taylor 1.5 / Euler–Maruyama path ensembles. Calibration of drift
//! and noise operators from gridded anomaly series and a synthetic scenario
//! generator complete the pipeline.
//!
//! Data-parallel loops (ensemble paths, factor columns, chaos blocks) run on
//! rayon when the `parallel` feature is enabled; see [`exec`].

pub mod calibration;
pub mod chaos;
pub mod covariance;
pub mod error;
pub mod exec;
pub mod grid;
pub mod linalg;
pub mod path_sim;
pub mod sampler;
pub mod scenario;

pub use error::{Error, Result};
