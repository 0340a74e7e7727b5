use std::io::ErrorKind;

use aprnet_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    /// 0 success, 1 internal, 2 usage or configuration, 3 data.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                Error::Config(_) | Error::Argument(_) => 2,
                Error::Io { source, .. } if source.kind() == ErrorKind::NotFound => 2,
                Error::Data(_)
                | Error::Parse { .. }
                | Error::Degenerate(_)
                | Error::Format(_)
                | Error::Corrupt(_) => 3,
                Error::Shape { .. } | Error::Index { .. } | Error::Contract(_) | Error::Io { .. } => 1,
            },
        }
    }
}
