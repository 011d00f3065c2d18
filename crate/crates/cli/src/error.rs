use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] retinexdual_core::Error),

    #[error("writing output: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    /// 2 for configuration problems, 4 for numerical failures, 3 for everything data-related.
    pub fn exit_code(&self) -> i32 {
        use retinexdual_core::Error as E;
        match self {
            CliError::Core(E::Config { .. }) => 2,
            CliError::Core(E::NonFiniteLoss { .. } | E::Numerical(_) | E::NonFinite { .. } | E::Scan(_)) => 4,
            CliError::Core(_) | CliError::Output(_) => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
