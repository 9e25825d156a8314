use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] lfm_core::Error),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Stable short name for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        use lfm_core::Error as C;
        match self {
            Error::Core(e) => match e {
                C::ShapeMismatch { .. } => "shape_mismatch",
                C::InvalidAttribute { .. } => "invalid_attribute",
                C::NonFinite { .. } => "non_finite",
                C::NotScalar(_) | C::NotOnTape | C::NotDifferentiable(_) => "autodiff",
                C::MissingParam(_) | C::SignatureMismatch(_) => "parameters",
                C::LabelOutOfRange { .. } => "label_out_of_range",
                C::InvalidConfig(_) => "config",
                C::Parse { .. } => "parse",
                C::Diverged { .. } => "diverged",
            },
            Error::Io { .. } => "io",
            Error::Config(_) => "config",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
