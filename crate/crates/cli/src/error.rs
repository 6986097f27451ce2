use cobra_core::CobraError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric error: {0}")]
    Numeric(String),
}

impl CliError {
    /// 2 config, 3 data, 4 runtime numeric.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<CobraError> for CliError {
    fn from(e: CobraError) -> Self {
        let msg = e.to_string();
        match e {
            CobraError::Config(_) | CobraError::Plan(_) | CobraError::Parameter(_) => {
                CliError::Config(msg)
            }
            CobraError::Input(_)
            | CobraError::Format(_)
            | CobraError::Io(_)
            | CobraError::Json(_)
            | CobraError::Routing(_) => CliError::Data(msg),
            CobraError::NonFinite(_)
            | CobraError::Dimension { .. }
            | CobraError::Index { .. }
            | CobraError::Contract(_) => CliError::Numeric(msg),
        }
    }
}

pub fn io_error(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}
