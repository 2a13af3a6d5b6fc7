use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("softmax row {row} is fully masked (padding mask bug upstream?)")]
    DegenerateRow { row: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty sequence")]
    EmptySequence,

    #[error(
        "label sequence of length {labels} (with {repeats} adjacent repeats) cannot be aligned to {frames} frames"
    )]
    Infeasible {
        frames: usize,
        labels: usize,
        repeats: usize,
    },

    #[error("sample {id}: keeping {kept} of {frames} frames leaves fewer than the {needed} required by its glosses")]
    InfeasibleAfterDrop {
        id: String,
        frames: usize,
        kept: usize,
        needed: usize,
    },

    #[error("brute-force oracle would enumerate {paths} paths (limit {limit})")]
    OracleScale { paths: f64, limit: f64 },

    #[error("WER is undefined for a corpus with zero reference tokens")]
    UndefinedMetric,

    #[error("empty batch")]
    EmptyBatch,

    #[error("every sample of the epoch was skipped")]
    EmptyEpoch,

    #[error("refusing optimizer step: non-finite gradient in parameter {0}")]
    PoisonedStep(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("unknown gloss {0:?}")]
    UnknownGloss(String),

    #[error("duplicate parameter name {0:?}")]
    DuplicateParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Numeric failures (as opposed to bad input or configuration).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::DegenerateRow { .. } | Error::NonFinite(_) | Error::PoisonedStep(_)
        )
    }
}
