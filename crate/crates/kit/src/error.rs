use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum KitError {
    #[error(transparent)]
    Core(#[from] unissl_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{stage} stage failed: {source}")]
    Stage { stage: &'static str, source: Box<KitError> },
}

pub type Result<T, E = KitError> = std::result::Result<T, E>;

impl KitError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> KitError {
        let path = path.into();
        move |source| KitError::Io { path, source }
    }

    /// True for problems with the user's input rather than with the run.
    pub fn is_validation(&self) -> bool {
        match self {
            KitError::Config(_) => true,
            KitError::Core(e) => matches!(e, unissl_core::Error::UnknownSpec { .. }),
            KitError::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    pub fn in_stage(stage: &'static str) -> impl FnOnce(KitError) -> KitError {
        move |e| KitError::Stage { stage, source: Box::new(e) }
    }
}
