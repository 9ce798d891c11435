use std::path::PathBuf;

/// Errors surfaced by corpus loading, tree maintenance, and the simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("cannot insert an empty sequence")]
    EmptySequence,
    #[error("depth cap must be at least 1")]
    ZeroDepthCap,
    #[error("cannot evict from a tree with no retained sequences")]
    EmptyTree,
    #[error("online extension is only supported on per-request trees")]
    NotPerRequest,
    #[error("corpus is empty")]
    EmptyCorpus,
}

pub type Result<T> = std::result::Result<T, Error>;
