//! Tree-structured modular visual grounding at desk scale.
//!
//! The pipeline: dependency-parsed expressions become validated trees,
//! a bidirectional child-sum tree LSTM encodes every node, a sampled
//! assembler picks a module (score, add, or relational re-score) per
//! internal node, and per-region grounding scores accumulate bottom-up
//! to the root. Training runs on a synthetic compositional task with a
//! brute-force resolution oracle, on a built-in reverse-mode autodiff
//! engine.

pub mod assembler;
pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod grounding;
pub mod model;
pub mod optim;
pub mod parse;
pub mod rng;
pub mod synth;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
