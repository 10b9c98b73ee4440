use std::fmt;

use serde::{Deserialize, Serialize};

/// A single broken invariant found while validating a [`PredictionSet`](crate::PredictionSet).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Offending row, `None` for dataset-level problems.
    pub row: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.row {
            Some(row) => write!(f, "row {row}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid prediction set: {}", summarize(.0))]
    Validation(Vec<Violation>),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("quadrature did not converge after {panels} panels (last change {last_change:e})")]
    Quadrature { panels: usize, last_change: f64 },

    #[error("non-finite objective at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("experiment cell {cell} failed: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for errors caused by bad user input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::InvalidInput(_)
                | Error::EmptyDataset
                | Error::DimensionMismatch { .. }
                | Error::Parse { .. }
                | Error::Json(_)
                | Error::Csv(_)
                | Error::Io(_)
        )
    }
}

fn summarize(violations: &[Violation]) -> String {
    const SHOWN: usize = 5;
    let mut out = violations
        .iter()
        .take(SHOWN)
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ");
    if violations.len() > SHOWN {
        out.push_str(&format!(" (and {} more)", violations.len() - SHOWN));
    }
    out
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
