use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("degenerate rotation: quaternion has zero norm")]
    DegenerateRotation,

    #[error("singular covariance (determinant {det:e})")]
    SingularCovariance { det: f64 },

    #[error("cannot initialize a cloud from an empty point set")]
    EmptyPointSet,

    #[error("shape mismatch: {what} (expected {expected}, got {got})")]
    ShapeMismatch {
        what: &'static str,
        expected: String,
        got: String,
    },

    #[error("image {width}x{height} is smaller than the {window}x{window} SSIM window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        window: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("pruning removed every Gaussian at iteration {iteration}")]
    EmptyCloud { iteration: usize },

    #[error("non-finite loss at iteration {iteration} (term `{term}` = {value})")]
    NonFiniteLoss {
        iteration: usize,
        term: &'static str,
        value: f64,
    },
}

impl Error {
    pub(crate) fn shape(what: &'static str, expected: impl core::fmt::Display, got: impl core::fmt::Display) -> Self {
        use alloc::string::ToString;
        Error::ShapeMismatch {
            what,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
