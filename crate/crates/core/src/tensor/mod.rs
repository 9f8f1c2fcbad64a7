//! Dense matrices and the reverse-mode tape built on them.

mod matrix;
mod tape;

pub use matrix::Matrix;
pub use tape::{detach, Gradients, NodeId, SparseAggregation, Tape, TapeMatrix};
