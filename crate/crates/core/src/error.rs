use std::path::PathBuf;

/// Errors raised by the grid, geometry, mesh, oracle and optimizer layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point {value} outside grid on axis {axis} (valid range [{lo}, {hi}])")]
    OutOfBounds { axis: char, value: f64, lo: f64, hi: f64 },

    #[error("window origin {origin:?} dims {window:?} does not fit source dims {source_dims:?}")]
    Window {
        origin: [usize; 3],
        window: [usize; 3],
        source_dims: [usize; 3],
    },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("shape mismatch at link {link}: `{left}` produces {left_shape} but `{right}` expects {right_shape}")]
    ShapeMismatch {
        link: usize,
        left: String,
        right: String,
        left_shape: String,
        right_shape: String,
    },

    #[error("length mismatch in {context}: expected {expected}, got {actual}")]
    Length {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("spec mismatch between {left} and {right}")]
    SpecMismatch { left: String, right: String },

    #[error("isosurface touches the grid boundary at node {node:?}")]
    BoundaryCrossing { node: [usize; 3] },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("component `{component}` failed: {message}")]
    Component { component: String, message: String },

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }
}
