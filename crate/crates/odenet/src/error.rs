//! Crate-wide error type.
//!
//! Low-level matrix helpers in [`crate::linalg`] treat shape misuse as a
//! programmer error and panic; everything user-facing (simulation, training,
//! file I/O, compilation of shallow nets) validates its inputs and returns
//! one of these variants instead.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Dimension mismatch between containers that must agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A state blew up during forward or backward integration.
    #[error("numerical divergence at {}", divergence_site(*step, *sample, *batch, *epoch))]
    Divergence {
        step: usize,
        sample: Option<usize>,
        batch: Option<usize>,
        epoch: Option<usize>,
    },

    /// A matrix does not have the rank a contract requires.
    #[error("{what} must have rank {expected}, numerical rank is {got}")]
    RankDeficient {
        what: String,
        expected: usize,
        got: usize,
    },

    /// A ridge-unit weight matrix contains an all-zero row.
    #[error("zero row {row} in ridge matrix{}", unit_suffix(*unit))]
    ZeroRow { unit: Option<usize>, row: usize },

    /// Square factorization C = AP with det P > 0 requires matching
    /// determinant signs; no valid factor exists otherwise.
    #[error("determinant sign mismatch{}: sgn(det A) = {sign_a} but sgn(det C) = {sign_c}; \
             no factor P with det P > 0 exists for square A", unit_suffix(*unit))]
    DetSignMismatch {
        unit: Option<usize>,
        sign_a: i8,
        sign_c: i8,
    },

    /// LU hit a (numerically) zero pivot.
    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("empty batch: {0}")]
    EmptyBatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported task: {0}")]
    UnsupportedTask(String),

    /// Checkpoint file is malformed (magic, version, truncation, tags).
    #[error("bad checkpoint {0}")]
    BadCheckpoint(String),

    /// Text inputs (shallow nets, CSV, IDX) that fail to parse.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn divergence_site(
    step: usize,
    sample: Option<usize>,
    batch: Option<usize>,
    epoch: Option<usize>,
) -> String {
    let mut s = format!("step {step}");
    if let Some(k) = sample {
        s.push_str(&format!(", sample {k}"));
    }
    if let Some(b) = batch {
        s.push_str(&format!(", batch {b}"));
    }
    if let Some(e) = epoch {
        s.push_str(&format!(", epoch {e}"));
    }
    s
}

fn unit_suffix(unit: Option<usize>) -> String {
    match unit {
        Some(u) => format!(" (unit {u})"),
        None => String::new(),
    }
}

impl Error {
    /// Attach a sample index to a divergence error, keeping other context.
    pub(crate) fn with_sample(self, k: usize) -> Error {
        match self {
            Error::Divergence {
                step,
                batch,
                epoch,
                ..
            } => Error::Divergence {
                step,
                sample: Some(k),
                batch,
                epoch,
            },
            other => other,
        }
    }

    /// Attach epoch/batch indices to a divergence error.
    pub(crate) fn with_epoch_batch(self, epoch: usize, batch: usize) -> Error {
        match self {
            Error::Divergence { step, sample, .. } => Error::Divergence {
                step,
                sample,
                batch: Some(batch),
                epoch: Some(epoch),
            },
            other => other,
        }
    }

    /// Attach a unit index to construction errors raised per ridge unit.
    pub(crate) fn with_unit(self, u: usize) -> Error {
        match self {
            Error::ZeroRow { row, .. } => Error::ZeroRow { unit: Some(u), row },
            Error::DetSignMismatch {
                sign_a, sign_c, ..
            } => Error::DetSignMismatch {
                unit: Some(u),
                sign_a,
                sign_c,
            },
            Error::RankDeficient {
                what,
                expected,
                got,
            } => Error::RankDeficient {
                what: format!("{what} (unit {u})"),
                expected,
                got,
            },
            other => other,
        }
    }
}
