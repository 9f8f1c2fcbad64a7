//! Training and evaluation engine for joint spatial-temporal message passing
//! on snapshot-based dynamic graphs.
//!
//! Each layer keeps a per-node LSTM state, stacks projected current features
//! on top of the temporal summaries, and runs one round of message passing
//! over a temporally augmented graph with `2N` vertices. See the crate README
//! for the module map and the command-line driver.

pub mod data;
pub mod error;
pub mod graph;
pub mod heads;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
