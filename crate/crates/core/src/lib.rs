//! Parameter-free adaptation of a multilingual encoder-decoder translation model.
//!
//! A trained multilingual model is pruned by weight magnitude; the freed weights
//! are then retrained pair by pair under an ownership mask so that every earlier
//! pair, and zero-shot translation through the shared weights, stays bitwise
//! unchanged.

pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod numcore;
pub mod packing;
pub mod pipeline;
pub mod seeds;

pub use error::{Error, Result};

#[cfg(test)]
mod testkit;
