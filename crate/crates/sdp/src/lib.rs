//! Small dense semidefinite programming in linear-matrix-inequality form.
//!
//! Problems carry one symmetric LMI block, scalar variables, at most one
//! symmetric matrix variable entering through congruences `Tᵀ P T`, and
//! linear inequalities on the scalars. The matrix-variable part of the Schur
//! complement is assembled entrywise from `T X Tᵀ` and `T Z⁻¹ Tᵀ`, so a
//! Lyapunov-type variable never has to be expanded into dense coefficient
//! matrices.

mod problem;
mod solver;

pub use problem::{CongruenceTerm, LinearIneq, LmiProgram, MatrixVar, ScalarVar};
pub use solver::{solve, Settings, Solution, SolveStatus};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("non-finite data in {0}")]
    NonFinite(String),
    #[error("{0} is not symmetric")]
    NotSymmetric(String),
}
