//! Dynamic retrieval-augmented generation at desk scale.
//!
//! A state-aware controller rebuilds the retrieval query at every decoding
//! step from the original query and the decoder's hidden state. Documents
//! are scored by scaled dot product, softly weighted into a context vector,
//! and that vector conditions a small causal transformer. The whole path is
//! differentiable, so retrieval and generation train jointly.

pub mod controller;
pub mod corpus;
pub mod error;
pub mod generator;
pub mod harness;
pub mod index;
pub mod metrics;
pub mod params;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
