use thiserror::Error;

/// Failures of the command-line front end, each mapped to an exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid JSON: {0}")]
    Parse(String),
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("unsupported version {0:?}; expected \"ironkit-1\"")]
    Version(String),
    #[error(transparent)]
    Solver(#[from] ironkit::Error),
}

impl CliError {
    pub fn schema(path: &str, message: &str) -> Self {
        CliError::Schema {
            path: path.to_string(),
            message: message.to_string(),
        }
    }

    /// Prefixes the pointer of a schema error, for instances inside a batch.
    pub fn under(self, prefix: &str) -> Self {
        match self {
            CliError::Schema { path, message } => CliError::Schema {
                path: format!("{prefix}{path}"),
                message,
            },
            other => other,
        }
    }

    /// 1 usage, 2 schema or bad input, 3 convergence, 4 broken invariant.
    pub fn exit_code(&self) -> i32 {
        use ironkit::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Parse(_) | CliError::Schema { .. } | CliError::Version(_) => 2,
            CliError::Solver(e) => match e {
                E::NotConverged { .. } | E::DecompositionStalled { .. } => 3,
                E::UltramodularityViolated { .. }
                | E::MeanMismatch { .. }
                | E::ClosureDiverged { .. }
                | E::InfeasibleEta { .. }
                | E::LpFailure(_)
                | E::QuadratureFailure { .. } => 4,
                _ => 2,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Parse(_) => "parse",
            CliError::Schema { .. } => "schema",
            CliError::Version(_) => "version",
            CliError::Solver(_) => "solver",
        }
    }
}
