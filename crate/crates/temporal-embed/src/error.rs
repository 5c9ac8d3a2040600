use std::path::PathBuf;

/// Errors surfaced by dataset I/O, training, and evaluation.
///
/// Variants carry enough context (sequence id, frame index, iteration) to
/// locate the offending input without a debugger.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("sequence {id}: payload holds {got} bytes, expected {expected} ({frames} frames x {dim} dims)")]
    TruncatedPayload {
        id: String,
        got: u64,
        expected: u64,
        frames: usize,
        dim: usize,
    },

    #[error("sequence {id}: non-finite feature at frame {frame}, component {component}")]
    NonFiniteFeature {
        id: String,
        frame: usize,
        component: usize,
    },

    #[error("sequence {id}: states payload holds {got} entries, expected {expected}")]
    StatesLengthMismatch { id: String, got: usize, expected: usize },

    #[error("duplicate sequence id {id}")]
    DuplicateSequenceId { id: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("malformed checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no sequence admits a full context window at any stride")]
    NoFeasibleTarget,

    #[error("dataset has fewer than 2 sequences; cross-sequence negatives unavailable")]
    NoCrossSequence,

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: u64 },

    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: u64 },

    #[error(
        "parameter update at iteration {iteration} left the representable range \
         (learning rate times gradient overflowed)"
    )]
    NonFiniteUpdate { iteration: u64 },

    #[error("sequence {id} has no label; evaluation requires fully labeled data")]
    MissingLabel { id: String },

    #[error("label {label} has a single member ({id}); its query has no relevant items")]
    SingletonClass { label: usize, id: String },

    #[error("ranked list contains no relevant items")]
    NoRelevantItems,

    #[error("no video qualifies for this evaluation (need at least {needed} frames)")]
    NoQualifyingVideo { needed: usize },

    #[error("empty {0}")]
    EmptyInput(&'static str),
}

impl Error {
    /// True for failures of the arithmetic itself (overflow to inf, NaN),
    /// as opposed to bad inputs or i/o.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteLoss { .. }
                | Error::NonFiniteGradient { .. }
                | Error::NonFiniteUpdate { .. }
        )
    }
}
