use std::path::PathBuf;

use thiserror::Error;

/// A command failure and the exit status it maps to.
#[derive(Debug, Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),

    #[error("no such file: {}", .0.display())]
    NoSuchFile(PathBuf),

    #[error("{}: {source}", path.display())]
    Read {
        path: PathBuf,
        #[source]
        source: knn_ner::Error,
    },

    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] knn_ner::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) | Failure::NoSuchFile(_) => 2,
            Failure::Write { .. } => 5,
            Failure::Read { source, .. } | Failure::Core(source) => core_code(source),
        }
    }
}

fn core_code(e: &knn_ner::Error) -> u8 {
    use knn_ner::Error::*;
    match e {
        InvalidInput(_) => 2,
        Mismatch(_) => 4,
        Io { .. }
        | BadMagic { .. }
        | VersionMismatch { .. }
        | Truncated { .. }
        | Normalization { .. }
        | Corrupt { .. }
        | UnlabeledToken { .. }
        | EmptyDatastore
        | RecallFailure { .. } => 3,
        EmptyNeighbors => 5,
    }
}

pub type CmdResult<T = ()> = std::result::Result<T, Failure>;
