//! Joint pilot design and channel estimation for uplink multiuser MIMO.
//!
//! The crate provides two estimation pipelines over the same signal model:
//!
//! * a closed-form LMMSE baseline driven by a fixed heuristic pilot family,
//! * a learned pipeline where per-user pilot networks (structurally
//!   constrained linear maps equivalent to `X_k^T (x) I_N`) are trained
//!   jointly with a chain of DNN estimators that apply successive
//!   interference cancellation.
//!
//! Training uses plain SGD for network weights and projected gradient
//! descent for the pilot coefficients so per-user power budgets hold after
//! every step. All complex arithmetic is carried as ordered (re, im) pairs
//! so the reverse-mode tape only ever differentiates real scalars.

pub mod checkpoint;
pub mod cli;
pub mod cmat;
pub mod config;
pub mod lmmse;
pub mod mimo;
pub mod neural;
pub mod output;
pub mod pilot;
pub mod rng;
pub mod sic;
pub mod trainer;
pub mod verify;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
