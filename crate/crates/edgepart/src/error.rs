use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },

    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: std::io::Error },

    /// Malformed document. `line` is 1-based; 0 when unknown.
    #[error("{origin}:{line}: {message}")]
    Syntax {
        origin: String,
        line: usize,
        message: String,
    },

    #[error("{origin}: {source}")]
    Invalid {
        origin: String,
        source: edgepart_core::Error,
    },

    #[error(transparent)]
    Core(#[from] edgepart_core::Error),

    #[error("{0}")]
    Usage(String),
}

impl Error {
    /// 1 for internal failures, 2 for bad input or usage.
    pub fn exit_code(&self) -> u8 {
        use edgepart_core::Error as C;
        match self {
            Error::Write { .. } => 1,
            Error::Core(C::Invariant(_) | C::TaskCountUnderflow(_) | C::UnknownTask(_))
            | Error::Invalid {
                source: C::Invariant(_),
                ..
            } => 1,
            _ => 2,
        }
    }

    pub(crate) fn invalid(origin: impl Into<String>, source: edgepart_core::Error) -> Self {
        Error::Invalid {
            origin: origin.into(),
            source,
        }
    }
}

pub(crate) fn read(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write(path: &std::path::Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}
