use std::io;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] lmnet::Error),
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Core(e.into())
    }
}

/// Process exit status for an error.
///
/// | code | meaning |
/// |------|---------|
/// | 0 | success |
/// | 2 | usage: bad flags, missing paths |
/// | 3 | I/O |
/// | 4 | malformed file: format, parse, calibration, shape, corruption, config |
/// | 5 | numerical divergence during training |
/// | 6 | invalid input: bad values, degenerate scenes, capacity, refused overwrite |
pub fn exit_code(e: &CliError) -> i32 {
    use lmnet::Error as E;
    match e {
        CliError::Usage(_) => 2,
        CliError::Config(_) => 4,
        CliError::Core(e) => match e {
            E::Io(_) => 3,
            E::Format(_) | E::Parse { .. } | E::Calib(_) | E::ShapeMismatch { .. } | E::Corruption(_) => 4,
            E::Divergence { .. } => 5,
            E::InvalidArgument(_) | E::DegenerateScene(_) | E::Capacity(_) | E::UndefinedAngle => 6,
        },
    }
}
