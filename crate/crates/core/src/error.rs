use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("{function} is undefined at {value}")]
    Domain { function: &'static str, value: f64 },
    #[error("invalid distribution parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("{routine} failed to converge after {iterations} iterations")]
    NoConvergence {
        routine: &'static str,
        iterations: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("observation {index}: covariate row must start with the intercept value 1, got {value}")]
    MissingIntercept { index: usize, value: f64 },
    #[error("observation {index}: expected {expected} covariates, got {actual}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        actual: usize,
    },
    #[error("covariate dimension must be at least 2 (intercept plus one covariate), got {0}")]
    TooFewCovariates(usize),
    #[error("observation {index}: non-finite value")]
    NonFiniteObservation { index: usize },
    #[error("observation {index}: time {time} must be positive")]
    NonPositiveTime { index: usize, time: f64 },
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("parameter dimension {actual} does not match data dimension {expected}")]
    ParameterDimension { expected: usize, actual: usize },
    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("log-likelihood evaluated to a non-finite value")]
    NonFiniteLikelihood,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Failures of the coordinate ascent loop. All carry the 1-based iteration.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("iteration {iteration}: scale rate update gave omega = {omega} <= 0")]
    NonPositiveOmega { iteration: usize, omega: f64 },
    #[error("iteration {iteration}: coefficient precision matrix is not positive definite")]
    SingularPrecision { iteration: usize },
    #[error("iteration {iteration}: ELBO is not finite")]
    NonFiniteElbo { iteration: usize },
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReferenceError {
    #[error("maximum likelihood needs n > p (n = {n}, p = {p})")]
    TooFewObservations { n: usize, p: usize },
    #[error("Newton iteration did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("observed information matrix is singular")]
    SingularHessian,
    #[error("invalid sampler settings: {0}")]
    InvalidSampler(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("{method}: {failed} of {total} replicates failed (limit 1%)")]
    TooManyFailures {
        method: String,
        failed: usize,
        total: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Problems reading a survival CSV file.
#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("line {line}, column `{column}`: cannot parse {value:?} as a number")]
    Parse {
        line: usize,
        column: String,
        value: String,
    },
    #[error("line {line}: time must be positive, got {value}")]
    NonPositiveTime { line: usize, value: f64 },
    #[error("line {line}: status must be 0 or 1, got {value:?}")]
    InvalidStatus { line: usize, value: String },
    #[error("line {line}: expected {expected} fields, got {actual}")]
    RowLength {
        line: usize,
        expected: usize,
        actual: usize,
    },
    #[error("no covariate columns besides `time` and `status`")]
    NoCovariates,
    #[error("dataset has no rows")]
    Empty,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}
