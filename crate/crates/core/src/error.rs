use thiserror::Error;

/// Library error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse {
        line: usize,
        column: usize,
        msg: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("curve {index}: {msg}")]
    Curve { index: usize, msg: String },

    #[error("parameter {u} outside domain [{lo}, {hi}]")]
    Domain { u: f64, lo: f64, hi: f64 },

    #[error("degenerate joint at segment {segment}: zero-length end tangent")]
    DegenerateJoint { segment: usize },

    #[error("knot multiplicity would exceed 3 at t={knot}")]
    MultiplicityOverflow { knot: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn curve(index: usize, msg: impl Into<String>) -> Self {
        Error::Curve {
            index,
            msg: msg.into(),
        }
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
