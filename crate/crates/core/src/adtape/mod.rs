//! Reverse-mode automatic differentiation over recorded scalar graphs.
//!
//! A [`Tape`] is immutable once recorded. Gradients take one reverse
//! sweep; Hessians are evaluated as forward-over-reverse products along
//! coloured seed directions chosen from the detected [`SparsityPattern`].

mod chunked;
mod expr;
mod hessian;
mod sparsity;
mod tape;

pub use chunked::{ChunkedPlan, ChunkedTape};
pub use expr::{record, Expr};
pub use hessian::{color_symmetric, Coloring, HessianPlan, SparseSymmetric};
pub use sparsity::SparsityPattern;
pub use tape::{Tape, TapeBuilder, Var, Workspace};
