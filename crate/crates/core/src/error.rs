use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by graph ingestion, training, calibration and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed edge list at line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("graph has no edges")]
    EmptyGraph,

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not enough non-edges: requested {requested}, available {available}")]
    InsufficientNonEdges { requested: usize, available: usize },

    #[error("spectrum is identically zero")]
    ZeroSpectrum,

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("basis columns are not orthonormal (max deviation {deviation:e})")]
    NotOrthonormal { deviation: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("target d_spec {target} unreachable within |eta| <= {eta_max_abs}: nearest achieved {nearest_dspec} at eta {nearest_eta}")]
    TargetUnreachable {
        target: f64,
        eta_max_abs: f64,
        nearest_eta: f64,
        nearest_dspec: f64,
    },

    #[error("probe budget of {max_probes} exhausted; bracket [{lo}, {hi}], nearest d_spec {nearest_dspec} at eta {nearest_eta}")]
    ProbeBudgetExhausted {
        max_probes: usize,
        lo: f64,
        hi: f64,
        nearest_eta: f64,
        nearest_dspec: f64,
    },

    #[error("all paired differences are zero")]
    AllZeroDifferences,

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse classification used by the command-line front end.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) => ErrorKind::Usage,
            Error::Io { .. }
            | Error::MalformedLine { .. }
            | Error::EmptyGraph
            | Error::InvalidGraph(_)
            | Error::Disconnected { .. }
            | Error::InsufficientNonEdges { .. }
            | Error::Json(_)
            | Error::Csv(_) => ErrorKind::Data,
            Error::ZeroSpectrum
            | Error::InvalidSpectrum(_)
            | Error::NotOrthonormal { .. }
            | Error::Numerical(_)
            | Error::TargetUnreachable { .. }
            | Error::ProbeBudgetExhausted { .. }
            | Error::AllZeroDifferences => ErrorKind::Numerical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

pub type Result<T> = std::result::Result<T, Error>;
