use std::fmt;

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Campaign stage in which a failure happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Init,
    Rerandomize,
    Hammer,
    Detect,
    Reproduce,
    Reallocate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Init => "init",
            Stage::Rerandomize => "rerandomize",
            Stage::Hammer => "hammer",
            Stage::Detect => "detect",
            Stage::Reproduce => "reproduce",
            Stage::Reallocate => "reallocate",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("address error: {0}")]
    Address(String),

    #[error("allocation error: {0}")]
    Allocation(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("round {round}, stage {stage}: {source}")]
    Campaign {
        round: u32,
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn allocation(msg: impl Into<String>) -> Self {
        Error::Allocation(msg.into())
    }

    pub(crate) fn in_round(self, round: u32, stage: Stage) -> Self {
        Error::Campaign {
            round,
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, looking through campaign context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Campaign { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by invalid configuration rather than runtime state.
    pub fn is_config(&self) -> bool {
        matches!(self.root(), Error::Config(_) | Error::Parse { .. })
    }
}
