use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    /// The input does not follow the documented file layout.
    #[error("format error: {0}")]
    Format(String),

    /// Channels disagree in length or the payload is truncated.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Normal equations are singular, e.g. for a constant signal.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("sentinel signature has no vector form")]
    Sentinel,

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("population is empty; train it first")]
    NotTrained,

    /// Negative selection could not find enough detectors outside the self set.
    #[error("coverage error: accepted {accepted} of {draws} candidates")]
    Coverage { accepted: usize, draws: usize },

    /// Detector and predictor outputs refer to different windows.
    #[error("pipeline ordering error: detector window {detector}, predictor window {predictor}")]
    Ordering { detector: u64, predictor: u64 },
}
