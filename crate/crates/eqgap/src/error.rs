//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by mesh/data ingestion, evaluation and solving.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("invalid mesh: {0}")]
    MeshInvalid(String),

    #[error("inverted element {element}: non-positive Jacobian determinant")]
    InvertedElement { element: usize },

    #[error("dangling node-set index: set \"{set}\" references node {index} but the mesh has {node_count} nodes")]
    DanglingNodeSet {
        set: String,
        index: usize,
        node_count: usize,
    },

    #[error("invalid dataset: {0}")]
    DatasetInvalid(String),

    #[error("locally inverted deformation in element {element}: det F <= 0")]
    InvertedDeformation { element: usize },

    #[error("domain error: det F = {det} is not positive")]
    NonPositiveDet { det: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient training steps: requested {requested}, source has {available}")]
    InsufficientSteps { requested: usize, available: usize },

    #[error("empty free node set: every node is a grip or reaction node")]
    EmptyFreeSet,

    #[error("empty test set")]
    EmptyTestSet,

    #[error("non-finite force contribution in element {element}")]
    NonFiniteForce { element: usize },

    #[error("non-finite loss at step {step_id}{}", element.map(|e| format!(", first non-finite contribution in element {e}")).unwrap_or_default())]
    NonFiniteLoss {
        step_id: u64,
        element: Option<usize>,
    },

    #[error("forward solve diverged: last converged stretch {last_converged}, failing increment {failing}")]
    SolverDiverged { last_converged: f64, failing: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
