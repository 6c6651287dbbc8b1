use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Structured failure categories shared by every module and the CLI.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("channel: {0}")]
    Channel(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("format: {0}")]
    Format(String),
    #[error("config: {0}")]
    Config(String),
    #[error("not found: {0}")]
    Missing(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Coarse error class, mapped to process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Input,
    Numeric,
    Data,
    Config,
    Io,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Input => 2,
            Category::Config => 3,
            Category::Data => 4,
            Category::Numeric => 5,
            Category::Io => 6,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Category::Input => "input",
            Category::Numeric => "numeric",
            Category::Data => "data",
            Category::Config => "config",
            Category::Io => "io",
        };
        f.write_str(s)
    }
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::ShapeMismatch { .. } | Error::InvalidArgument(_) => Category::Input,
            Error::Numerical(_) | Error::Channel(_) | Error::Diverged(_) => Category::Numeric,
            Error::Parse { .. } | Error::Format(_) | Error::Missing(_) => Category::Data,
            Error::Config(_) => Category::Config,
            Error::Io(_) => Category::Io,
        }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch { op, left: left.to_vec(), right: right.to_vec() }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
