use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },

    #[error("unknown layer kind `{0}`")]
    UnknownLayerKind(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("dangling tensor reference `{tensor}` (consumed by node `{node}`)")]
    DanglingTensor { tensor: String, node: String },

    #[error("cycle detected among nodes: {}", .0.join(", "))]
    Cycle(Vec<String>),

    #[error("non-positive extent inferred for tensor `{tensor}` (node `{node}`)")]
    NonPositiveExtent { tensor: String, node: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported rank {rank} for {op}")]
    UnsupportedRank { rank: usize, op: &'static str },

    #[error("shapes have not been inferred for this graph")]
    ShapesNotInferred,

    #[error("missing input activation `{0}`")]
    MissingInput(String),

    #[error("missing quantisation parameters: {0}")]
    MissingQuantParams(String),

    #[error("int32 accumulator overflow in node `{0}`")]
    AccumulatorOverflow(String),

    #[error("missing calibration data")]
    MissingCalibration,

    #[error("working set of {working_bytes} bytes exceeds device RAM ({ram_bytes} bytes)")]
    ExceedsDevice { working_bytes: u64, ram_bytes: u64 },

    #[error("tiling infeasible: {0}")]
    TilingInfeasible(String),

    #[error("invalid frontier: {0}")]
    InvalidFrontier(String),

    #[error("no feasible partition: {0}")]
    NoFeasiblePartition(String),

    #[error("invalid device: {0}")]
    InvalidDevice(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("statistics: {0}")]
    Stats(String),

    #[error("tensor file: {0}")]
    TensorFormat(String),

    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("I/O error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::FileNotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Process exit status for the command-line front end.
    ///
    /// `0` is success and `3` (verification failure) is produced by the verify
    /// command itself rather than by an error value.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoFeasiblePartition(_) | Error::ExceedsDevice { .. } | Error::TilingInfeasible(_) => 2,
            _ => 1,
        }
    }
}
