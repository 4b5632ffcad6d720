use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: {message} (at byte offset {offset})")]
    Ply { path: PathBuf, offset: u64, message: String },

    #[error("{path}: missing required PLY property `{name}`")]
    MissingProperty { path: PathBuf, name: String },

    #[error("unsupported camera model `{0}` (supported: SIMPLE_PINHOLE, PINHOLE, SIMPLE_RADIAL)")]
    UnsupportedCameraModel(String),

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("dataset: {0}")]
    Data(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] refsplat_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit status: 2 configuration, 3 data, 4 numerical abort, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use refsplat_core::Error as C;
        match self {
            Error::Config(_) => 2,
            Error::Core(C::InvalidConfig(_)) => 2,
            Error::Core(C::NonFiniteLoss { .. } | C::EmptyCloud { .. } | C::SingularCovariance { .. } | C::DegenerateRotation) => 4,
            Error::Core(_) => 3,
            Error::Parse { .. }
            | Error::Ply { .. }
            | Error::MissingProperty { .. }
            | Error::UnsupportedCameraModel(_)
            | Error::Image { .. }
            | Error::Data(_) => 3,
            Error::Io { .. } => 1,
        }
    }
}
