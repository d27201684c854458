//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by dataset validation, the likelihood machinery, the
/// variance-estimate search, and the interval constructors.
#[derive(Debug, Clone, Error)]
pub enum FhError {
    #[error("invalid dataset: {0}")]
    InvalidData(String),

    /// The design matrix does not have full column rank. `columns` names
    /// the offending (linearly dependent) column indices, zero-based.
    #[error("design matrix is rank deficient: column(s) {columns:?} are linearly dependent (rank {rank} < p = {p})")]
    RankDeficient {
        columns: Vec<usize>,
        rank: usize,
        p: usize,
    },

    #[error("X'V^-1·X is numerically singular at A = {a}")]
    SingularGls { a: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("maximizer did not converge within {max_iter} iterations; best bracket [{lo}, {hi}]")]
    NoConvergence { max_iter: usize, lo: f64, hi: f64 },

    /// The requested c* makes the uncertainty measure nonpositive.
    #[error("inadmissible uncertainty measure: s^2 = {s2} with c* = {c_star} (admissible range requires c* > {lower_bound})")]
    Inadmissible {
        s2: f64,
        c_star: f64,
        lower_bound: f64,
    },

    #[error("scenario error: {0}")]
    Scenario(String),

    /// An estimator's existence condition fails on the given geometry.
    #[error("existence condition violated: {0}")]
    ExistenceCondition(String),

    #[error("simulation failure rate {failed}/{total} exceeds 1%")]
    FailureRate { failed: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, FhError>;
