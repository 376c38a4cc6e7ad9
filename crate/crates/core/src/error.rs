use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("radial map is not strictly increasing on [0, sqrt(2)]: {0}")]
    NonMonotone(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("radius inversion failed for r = {radius}: {reason}")]
    Inversion { radius: f64, reason: &'static str },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("no admissible distortion parameters after {0} consecutive rejections")]
    RejectionExhausted(usize),
    #[error("unknown scene kind `{0}`")]
    UnknownSceneKind(String),
    #[error("non-finite loss at step {step}; synthetic batch {synthetic:?}, real batch {real:?}")]
    NonFiniteLoss {
        step: u64,
        synthetic: Vec<usize>,
        real: Vec<usize>,
    },
    #[error("non-finite latent at reverse step t = {0}")]
    NonFiniteLatent(usize),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("dataset {path}: {reason}")]
    Dataset { path: PathBuf, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io { path: path.into(), source })
    }
}
