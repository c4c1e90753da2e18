use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    /// A pivot fell below threshold while reducing one of the elimination stages.
    #[error("near-degenerate instance: stage {stage} pivot {pivot:.3e} in column {column}")]
    SmallPivot {
        stage: usize,
        column: usize,
        pivot: f64,
    },

    /// A coefficient that must vanish for the elimination template to apply did not.
    #[error("elimination template structure violated at stage {stage}: relative residue {residue:.3e}")]
    TemplateStructure { stage: usize, residue: f64 },

    #[error("cheirality check failed: {positive} of {total} points in front of both cameras")]
    Cheirality { positive: usize, total: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
