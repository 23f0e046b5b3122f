use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::grid::Cell;
use crate::imagination::protocol::RemoteError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("malformed scene: {0}")]
    SceneFormat(String),

    #[error("payload size mismatch in {file}: expected {expected} bytes, found {actual}")]
    PayloadSize {
        file: String,
        expected: usize,
        actual: usize,
    },

    #[error("scene invariant violated: {0}")]
    InvalidScene(String),

    #[error("need {needed} free interior cells, scene has {available}")]
    NotEnoughCells { needed: usize, available: usize },

    #[error("start cell ({}, {}) is occupied", .0.row, .0.col)]
    StartOccupied(Cell),

    #[error("cell ({}, {}) is out of bounds", .0.row, .0.col)]
    OutOfBounds(Cell),

    #[error("no path from ({}, {}) to ({}, {})", .from.row, .from.col, .to.row, .to.col)]
    Unreachable { from: Cell, to: Cell },

    #[error("index range overflow: base {base} + {count} pixels exceeds u64")]
    IndexOverflow { base: u64, count: u64 },

    #[error("embedding provider failed: {0}")]
    Provider(String),

    #[error(transparent)]
    Remote(#[from] RemoteError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn ensure_shape<A, B>(
    expected: &crate::grid::Grid<A>,
    actual: &crate::grid::Grid<B>,
) -> Result<()> {
    if expected.shape() != actual.shape() {
        return Err(Error::ShapeMismatch {
            expected: expected.shape(),
            actual: actual.shape(),
        });
    }
    Ok(())
}
