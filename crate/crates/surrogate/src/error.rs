use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] shapeflow_core::Error),

    #[error(transparent)]
    Nn(#[from] shapeflow_nn::NnError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<Error> for shapeflow_core::Error {
    fn from(e: Error) -> Self {
        match e {
            Error::Core(inner) => inner,
            other => shapeflow_core::Error::Component {
                component: "surrogate".into(),
                message: other.to_string(),
            },
        }
    }
}
