//! Stabilized early rumor detection on timestamped post streams.
//!
//! A recurrent classifier reads a claim's post stream interval by interval;
//! a neural Hawkes process models the flips of its prediction and fixes the
//! earliest time from which the prediction is expected to stay unchanged.
//! The crate provides the data model and preprocessing, TF-IDF features,
//! both neural components with their training loop, the evaluation metrics,
//! and a CLI wiring them into reproducible experiments.

pub mod corpus;
pub mod detector;
pub mod error;
pub mod features;
pub mod math;
pub mod stability;

pub use error::{HeardError, Result};
