use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IvyError {
    #[error("non-binary value at row {row}, column {col}")]
    NonBinaryValue { row: usize, col: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("{count} binary variables exceed the enumeration cap of {cap}")]
    TooManyVariables { count: usize, cap: usize },
    #[error("dependent clique of size {size} exceeds the cap of {cap}")]
    CliqueTooLarge { size: usize, cap: usize },
    #[error("objective became non-finite at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },
    #[error("only {found} valid candidates identified; at least 3 are required")]
    TooFewValid { found: usize },
    #[error("no (lambda, gamma) grid point has a score gap above 10")]
    NoQualifyingModel,
    #[error("moment system is rank deficient: {0}")]
    RankDeficient(String),
    #[error("moment matching stalled with residual {residual:e}")]
    InfeasibleMoments { residual: f64 },
    #[error("covariate has zero variance")]
    ConstantCovariate,
    #[error("first-stage slope {slope:e} is below the minimum magnitude {min:e}")]
    WeakDenominator { slope: f64, min: f64 },
    #[error("all {replicates} replicates failed (last error: {last})")]
    AllReplicatesFailed { replicates: usize, last: String },
    #[error("scores contain a single class")]
    SingleClass,
}

pub type Result<T, E = IvyError> = std::result::Result<T, E>;
