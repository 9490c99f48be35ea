use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("quality factor {0} outside [1, 100]")]
    QualityOutOfRange(u32),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("coefficient {value} out of baseline range in {channel} block {block}")]
    CoefficientRange {
        channel: &'static str,
        block: usize,
        value: i32,
    },

    #[error("malformed JPEG stream: {0}")]
    Malformed(String),

    #[error("unsupported JPEG feature: {0}")]
    Unsupported(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("task weight c_c > 0 requires a label (image {0})")]
    MissingLabel(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss at step {step} (image {image}, q {quality})")]
    NonFiniteLoss {
        step: usize,
        image: usize,
        quality: u32,
    },

    #[error("classifier training did not converge: accuracy {accuracy:.3} after {epochs} epochs")]
    NoConvergence { accuracy: f64, epochs: usize },

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
