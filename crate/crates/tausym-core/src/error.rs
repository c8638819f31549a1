use thiserror::Error;

/// Errors shared across the engine.
///
/// Variants mirror the failure modes of the numerical contracts: solver
/// breakdowns, inputs outside the guaranteed neighbourhoods, and violated
/// structural assumptions (class tags, degree bounds, hypotheses).
#[derive(Debug, Error)]
pub enum CalcError {
    #[error("iteration failed to converge: {0}")]
    NoConvergence(String),

    #[error("point pair outside the injectivity neighbourhood: {0}")]
    OutOfNeighbourhood(String),

    #[error("jet extraction unstable: {0}")]
    JetUnstable(String),

    #[error("incompatible expansion tags: {0}")]
    TagMismatch(String),

    #[error("symbol class violation: {0}")]
    ClassViolation(String),

    #[error("polynomial degree bound violated: {0}")]
    DegreeViolation(String),

    #[error("composition hypotheses not satisfied: {0}")]
    HypothesisViolation(String),

    #[error("requested entry outside the built table: {0}")]
    MissingPEntry(String),

    #[error("quadrature failed to converge: {0}")]
    QuadratureNotConverged(String),

    #[error("operator not positive definite: {0}")]
    PositivityViolation(String),

    #[error("defect order did not decrease: {0}")]
    DefectNotDecaying(String),

    #[error("peel-off residual did not drop: {0}")]
    ResidualNotDropping(String),

    #[error("support separation violated: {0}")]
    SupportViolation(String),

    #[error("eigendecomposition failed: {0}")]
    EigenFailure(String),

    #[error("not enough points for a fit: {0}")]
    InsufficientPoints(String),

    #[error("aliasing risk in discrete application: {0}")]
    AliasRisk(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, CalcError>;
