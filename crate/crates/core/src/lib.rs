//! Temporal sentence grounding with a hierarchical local-global transformer.
//!
//! Given per-frame video features and per-word query features, the model
//! predicts the normalized `(start, end)` of the segment the query
//! describes. The crate carries its own small reverse-mode autodiff
//! ([`tensor`]) so every gradient is checkable against finite differences.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blocks;
pub mod checks;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod engine;
pub mod error;
pub mod head;
pub mod model;
pub mod params;
pub mod tensor;

pub use error::{HlgtError, Result};
