//! Goal-conditioned multi-agent reinforcement learning at desk scale.
//!
//! The crate trains independent per-agent policies (one shared parameter
//! set) to reach commanded goals from sparse feedback. The critic is a pair
//! of encoders scored by negative Euclidean distance and trained with a
//! symmetric InfoNCE loss over same-agent future goals; the actor moves its
//! differentiable actions toward the goal encoding. Exact tabular oracles
//! (occupancy measures, value iteration, mutual-information checks) verify
//! the learned quantities on enumerable instances, and a small experiment
//! harness handles configuration, training, evaluation, and multi-seed
//! statistics.
//!
//! A narrative guide with runnable snippets lives in `book/`; its code
//! blocks compile and run as doctests of this crate.

pub mod baseline;
pub mod critic;
pub mod envs;
pub mod error;
pub mod graph;
pub mod harness;
pub mod nn;
pub mod oracle;
pub mod policy;
pub mod replay;
pub mod stats;
pub mod tensor;

pub use error::{IcrlError, Result};
pub use tensor::Tensor;

#[cfg(doctest)]
mod book;
