//! Dense and sparse kernels: matrix exponential action, principal logarithm,
//! algebraic Lyapunov solves, PSD factorization and low-rank compression.

mod banded;
mod expm;
mod logm;
mod lowrank;
mod lyapunov;
mod operator;
mod sparse;
pub mod symeig;

pub use banded::{BandedLu, LinearSolver};
pub use expm::exp_action;
pub use logm::principal_log;
pub use lowrank::{
    centered_factor, compress_bounded, compress_columns, psd_factor, psd_projection_factor,
    LowRankFactor, DEFAULT_MAX_RANK,
};
pub use lyapunov::{ale_residual, solve_ale, KRONECKER_MAX_DIM};
pub use operator::Operator;
pub use sparse::CsrMatrix;
