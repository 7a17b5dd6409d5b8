//! Proper losses, stochastic choice models and generalized preference
//! optimization, with numeric certification of the theory at desk scale.
//!
//! The crate is organized around three connected layers:
//!
//! - **Savage layer** ([`proper_loss`], [`loss_catalog`], [`constructors`]):
//!   binary and multiclass proper losses, their Bayes-risk potentials,
//!   canonical links, convex conjugates and Bregman divergences, plus two
//!   loss factories (from an eligible convex potential, and from an arbitrary
//!   strictly increasing surrogate).
//! - **Choice layer** ([`klst`]): finite verification of the lottery-expanded
//!   local choice structure (bearability, wedge, path axioms) and
//!   monotonicity, and fitting of the Fechnerian representation
//!   p(y > y' | x) = F(u(x,y) - u(x,y')).
//! - **Optimization layer** ([`pipeline`], [`trainer`]): the regularized
//!   policy solve, reward-difference recovery, pairwise objectives for the
//!   PMPO / PPPO / phi-PO recipes, margins, length normalization, and a
//!   tabular synthetic training loop.
//!
//! All checks are grid-based numeric certificates rather than symbolic
//! proofs: a failed properness or axiom check is a valid result, reported
//! with a witness.

pub mod constructors;
pub mod core_math;
pub mod klst;
pub mod loss_catalog;
pub mod pipeline;
pub mod proper_loss;
pub mod trainer;

pub use core_math::{ProbVector, ScalarFn};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("quadrature failure: {0}")]
    Quadrature(String),
    #[error("did not converge: {0}")]
    NonConvergence(String),
    #[error("ineligible input: {0}")]
    Ineligible(String),
    #[error("improper loss: {0}")]
    Improper(String),
    #[error("not representable at tolerance: {0}")]
    NotRepresentable(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Number of worker threads for certification loops: the `PROPERPO_THREADS`
/// environment variable when set, else 1.
pub fn cert_threads() -> usize {
    std::env::var("PROPERPO_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&t| t >= 1)
        .unwrap_or(1)
}
