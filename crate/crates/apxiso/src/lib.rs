//! Approximate-isomorphism distances between finite metric structures.
//!
//! The crate works with finite multi-sorted metric structures (point sets with
//! a metric and real-valued predicates) and measures how close two structures
//! are to being isomorphic. Closeness is witnessed by *correlations* (total
//! surjective relations, sort by sort) and scored by the *distortion* of a
//! finite generator set of formulas: the supremum over generators and related
//! tuples of the discrepancy between the two structures.
//!
//! The main entry points are:
//!
//! * [`structure`] — metric structures, correlations, validation, file formats.
//! * [`formula`] — the s-expression formula DSL, evaluation, and Lipschitz
//!   modulus inference.
//! * [`distsys`] — distortion systems (named generator families such as
//!   Gromov-Hausdorff, Lipschitz, fGHK/eGHK, Banach-Mazur, IU) and the
//!   distortion of a correlation.
//! * [`search`] — exact and heuristic minimization of distortion over
//!   correlations, plus the stratified discrete variant.
//! * [`backforth`] — back-and-forth pseudo-metrics and Scott ranks.
//! * [`embound`] — sampled Banach spaces, emboundment, and the Banach-Mazur
//!   generator family.
//! * [`pathology`] — the irregular IU example structures and their
//!   finite-truncation behavior.
//!
//! Every runnable capability also has a standalone program under `examples/`.

pub mod backforth;
pub mod cli;
pub mod distsys;
pub mod embound;
pub mod formula;
pub mod pathology;
pub mod search;
pub mod structure;

/// Absolute tolerance used for all real comparisons in validation and checks.
pub const TOL: f64 = 1e-9;

/// Errors for operations whose inputs are structurally unusable (as opposed
/// to domain violations, which are reported as values).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("signature mismatch: {0}")]
    SignatureMismatch(String),
    #[error("size guard: {0} (pass force=true to override)")]
    SizeGuard(String),
    #[error("parse error at byte {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
