use thiserror::Error;

/// Failures of a CLI run, each mapped to a distinct exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] phiexp::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Exit codes.
pub mod code {
    pub const PASS: i32 = 0;
    pub const THRESHOLD_FAILED: i32 = 1;
    pub const BRACKET: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const DOMAIN: i32 = 4;
    pub const NUMERIC: i32 = 5;
    pub const IO: i32 = 6;
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use phiexp::Error as E;
        match self {
            CliError::Config(_) => code::CONFIG,
            CliError::Io(_) => code::IO,
            CliError::Core(e) => match e {
                E::Bracket { .. } => code::BRACKET,
                E::Generator(_) | E::Domain(_) | E::Input(_) | E::DimensionMismatch { .. } | E::Metadata { .. } => {
                    code::DOMAIN
                }
                E::Io(_) | E::Csv(_) | E::Json(_) => code::IO,
                E::AtTime { source, .. } => CliError::Core(clone_kind(source)).exit_code(),
                _ => code::NUMERIC,
            },
        }
    }
}

/// Enough of the inner error to classify it.
fn clone_kind(e: &phiexp::Error) -> phiexp::Error {
    use phiexp::Error as E;
    match e {
        E::Bracket { lower, upper, evaluations } => E::Bracket {
            lower: *lower,
            upper: *upper,
            evaluations: *evaluations,
        },
        E::Domain(m) => E::Domain(m.clone()),
        E::Input(m) => E::Input(m.clone()),
        other => E::Degenerate(other.to_string()),
    }
}
