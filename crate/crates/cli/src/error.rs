use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or config contents; raised before any work starts.
    #[error("config: {0}")]
    Config(String),

    #[error("missing file {0}")]
    MissingFile(String),

    #[error(transparent)]
    Core(#[from] relnas_core::Error),
}

impl CliError {
    /// Stable machine-readable category for the error JSON.
    pub fn kind(&self) -> &'static str {
        use relnas_core::Error as E;
        match self {
            CliError::Config(_) => "config",
            CliError::MissingFile(_) => "missing_file",
            CliError::Core(e) => match e {
                E::Schema(_) => "schema",
                E::Parse(_) => "parse",
                E::Io { .. } => "io",
                E::InvalidArch { .. } | E::NotDifferentiated(_) => "architecture",
                E::MissingLabels(_) => "missing_labels",
                E::NonFinite(_) => "non_finite",
                E::Audit(_) => "audit",
                _ => "runtime",
            },
        }
    }

    /// 2 for problems with the invocation itself, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" | "missing_file" | "schema" | "parse" => 2,
            _ => 1,
        }
    }
}
