use thiserror::Error;

/// Errors surfaced by the library.
///
/// Exit-code mapping for the CLI lives in `cli`; everything that stems from
/// user-provided configuration must carry enough context to print a
/// line-level diagnostic.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("covariance for user {user} is not Hermitian within 1e-10")]
    NotHermitian { user: usize },

    #[error(
        "covariance for user {user} is not positive semidefinite (eigenvalue {eigenvalue:.3e})"
    )]
    NotPsd { user: usize, eigenvalue: f64 },

    #[error("noise covariance is singular; LMMSE inner matrix cannot be factored")]
    SingularNoise,

    #[error("heuristic pilot family is only defined for 4 user antennas and pilot length 8 (user {user} has {m_tilde} antennas, pilot length {l})")]
    UnsupportedPilotShape {
        user: usize,
        m_tilde: usize,
        l: usize,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite value in {context} (parameter {param})")]
    NonFinite { context: String, param: String },

    #[error("training diverged at epoch {epoch}: batch loss stayed above 10x the initial value for a full epoch")]
    Diverged {
        epoch: usize,
        report: Box<crate::trainer::TrainReport>,
    },

    #[error("checkpoint decode error: {0}")]
    Checkpoint(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
