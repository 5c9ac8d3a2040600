//! Unsupervised temporal embeddings for frame sequences.
//!
//! Frames of a video are embedded so that a frame can be predicted from its
//! temporal context. Training pairs a target frame's embedding against
//! negatives under a ranking hinge loss; the context is the average of the
//! embeddings of surrounding frames. Evaluation covers event retrieval,
//! temporal retrieval, order recovery, and linear classification, each
//! runnable on trained embeddings or directly on raw features.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod objective;
pub mod sampler;
pub mod synth;
pub mod trainer;

mod par;
mod rng;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
