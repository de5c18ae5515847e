use std::fmt;

use ivy_core::IvyError;

/// Exit code for malformed input, configuration or arguments.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit code for numerical failure.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Parse { path: String, line: u64, column: u64, message: String },
    Validation(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => EXIT_NUMERICAL,
            _ => EXIT_VALIDATION,
        }
    }

    pub fn io(path: &std::path::Path, e: impl fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Parse { path, line, column, message } => {
                write!(f, "ParseError: {path}: line {line}, column {column}: {message}")
            }
            CliError::Validation(m) => write!(f, "{m}"),
            CliError::Numerical(m) => write!(f, "{m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Name of the error variant, used as a stable tag in diagnostics.
pub fn kind(e: &IvyError) -> &'static str {
    match e {
        IvyError::NonBinaryValue { .. } => "NonBinaryValue",
        IvyError::ShapeMismatch(_) => "ShapeMismatch",
        IvyError::InvalidArgument(_) => "InvalidArgument",
        IvyError::InvalidSpec(_) => "InvalidSpec",
        IvyError::UnknownPreset(_) => "UnknownPreset",
        IvyError::TooManyVariables { .. } => "TooManyVariables",
        IvyError::CliqueTooLarge { .. } => "CliqueTooLarge",
        IvyError::NonFiniteObjective { .. } => "NonFiniteObjective",
        IvyError::TooFewValid { .. } => "TooFewValid",
        IvyError::NoQualifyingModel => "NoQualifyingModel",
        IvyError::RankDeficient(_) => "RankDeficient",
        IvyError::InfeasibleMoments { .. } => "InfeasibleMoments",
        IvyError::ConstantCovariate => "ConstantCovariate",
        IvyError::WeakDenominator { .. } => "WeakDenominator",
        IvyError::AllReplicatesFailed { .. } => "AllReplicatesFailed",
        IvyError::SingleClass => "SingleClass",
    }
}

impl From<IvyError> for CliError {
    fn from(e: IvyError) -> Self {
        let msg = format!("{}: {e}", kind(&e));
        match e {
            IvyError::NonBinaryValue { .. }
            | IvyError::ShapeMismatch(_)
            | IvyError::InvalidArgument(_)
            | IvyError::InvalidSpec(_)
            | IvyError::UnknownPreset(_)
            | IvyError::TooManyVariables { .. }
            | IvyError::CliqueTooLarge { .. }
            | IvyError::SingleClass => CliError::Validation(msg),
            _ => CliError::Numerical(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
