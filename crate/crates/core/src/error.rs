use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage an error surfaced in, used to tag propagated failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Data,
    Train,
    Attack,
    Eval,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Data => "data",
            Stage::Train => "train",
            Stage::Attack => "attack",
            Stage::Eval => "eval",
        })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("{0} is undefined for this input")]
    Undefined(&'static str),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("[{stage}] {source}")]
    Staged {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Shape {
            context,
            expected,
            actual,
        }
    }

    pub fn at(self, stage: Stage) -> Self {
        match self {
            already @ Error::Staged { .. } => already,
            other => Error::Staged {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Process exit code: 2 config, 3 data, 4 runtime/numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Parse { .. } | Error::Data(_) | Error::Io(_) => 3,
            Error::Staged { source, .. } => source.exit_code(),
            Error::Shape { .. } | Error::Undefined(_) | Error::Numeric(_) => 4,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
