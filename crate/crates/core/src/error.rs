use thiserror::Error;

/// Errors raised by the inference engine and its tooling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("accumulated evidence is undefined for an empty correction sequence")]
    EmptySequence,

    #[error("no D* library entry for {0}")]
    LibraryMiss(String),

    #[error("belief has no finite mass")]
    DegenerateBelief,

    #[error("K = {k} corrections do not fit into {slots} distinct (time, agent) slots")]
    InfeasibleK { k: usize, slots: usize },

    #[error("failed to write D* library {path}: {source}")]
    LibraryWrite {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid correction: {0}")]
    InvalidCorrection(String),

    #[error("episode has ended")]
    EpisodeEnded,

    #[error("episode log: {0}")]
    Log(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
