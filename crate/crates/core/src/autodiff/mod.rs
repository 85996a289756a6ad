//! Tape-based reverse-mode differentiation over dense `f64` tensors.
//!
//! Recording an operation on a [`Tape`] evaluates it immediately (the
//! forward pass) and keeps the intermediate values the reverse pass needs.
//! Parameters live in a [`ParamStore`]; [`Tape::param`] binds one as a leaf
//! and [`Tape::accumulate_into`] returns its gradient to the store.
//!
//! Non-finite values are rejected at every operation boundary.

mod check;
mod params;
mod tape;
mod tensor;

pub use check::{finite_diff_check, finite_diff_check_params};
pub use params::{ParamId, ParamKind, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;


#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error("non-finite value produced by {op} at flat index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("variable {0} was not recorded on this tape")]
    UnknownVar(usize),
    #[error("{0}")]
    Invalid(String),
}
