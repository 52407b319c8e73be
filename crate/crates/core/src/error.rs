use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Vocabulary or embedding-dimension disagreement between two artifacts.
    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error("I/O error at byte {offset}: {source}")]
    Io {
        offset: u64,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic at byte 0: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("version mismatch at byte {offset}: expected {expected}, found {found}")]
    VersionMismatch {
        offset: u64,
        expected: u32,
        found: u32,
    },

    #[error("truncated input at byte {offset}: {needed} more bytes required")]
    Truncated { offset: u64, needed: usize },

    #[error(
        "normalization violation at byte {offset} (sentence {sentence}, token {token}): \
         log-sum-exp of base log-probabilities is {log_sum_exp:.6}"
    )]
    Normalization {
        offset: u64,
        sentence: usize,
        token: usize,
        log_sum_exp: f64,
    },

    #[error("corrupt data at byte {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },

    #[error("unlabeled token at sentence {sentence}, token {token}")]
    UnlabeledToken { sentence: usize, token: usize },

    #[error("datastore is empty")]
    EmptyDatastore,

    #[error("neighbor set is empty")]
    EmptyNeighbors,

    #[error(
        "approximate index recall {measured:.4} is below the target {target:.4} after escalation"
    )]
    RecallFailure { measured: f64, target: f64 },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn mismatch(msg: impl Into<String>) -> Self {
        Error::Mismatch(msg.into())
    }
}
