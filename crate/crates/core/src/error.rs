use std::io;

use thiserror::Error;

use crate::reconstruct::FringeFit;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An instrument or run configuration is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// A two-dimensional source was handed to a one-dimensional sampler.
    #[error("source is two-dimensional; use the pair sampler")]
    TwoDimensionalSource,

    /// Malformed time-tag file. `record` is the zero-based index of the first
    /// offending record, or `None` when the header itself is bad.
    #[error("time-tag format error at {}: {reason}", .record.map_or("header".to_string(), |r| format!("record {r}")))]
    TagFormat { record: Option<u64>, reason: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("least-squares design is rank deficient: {0}")]
    RankDeficient(String),

    #[error("no calibration peak: {0}")]
    NoCalibrationPeak(String),

    #[error("wavelength ranges do not overlap: {0}")]
    DisjointRanges(String),

    #[error("histogram geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("spectrum is multimodal at half maximum (crossings at {crossings:?} nm)")]
    Multimodal { crossings: Vec<f64> },

    /// The fringe fit ran out of iterations; the best parameters found so far
    /// are returned with `converged == false`.
    #[error("fringe fit did not converge after {iterations} iterations")]
    FitNotConverged { iterations: usize, best: Box<FringeFit> },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
