use thiserror::Error;

/// Errors raised anywhere in the simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("point ({x}, {y}) lies outside the unit square")]
    OutsideDomain { x: f64, y: f64 },

    #[error("stress is singular: p = {p} < 2 with kappa = 0 at A = 0")]
    RheologySingular { p: f64 },

    #[error("field evaluation failed: {0}")]
    Data(String),

    #[error("linear solver failure: {0}")]
    LinearSolver(String),

    #[error("Newton failed to converge after {iterations} iterations (residual {residual:.3e})")]
    NewtonNonConvergence { iterations: usize, residual: f64 },

    #[error("eigenvalue iteration did not converge after {iterations} steps (last change {change:.3e})")]
    EigenNonConvergence { iterations: usize, change: f64 },

    #[error("time step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("trajectory {trajectory} failed: {source}")]
    Trajectory {
        trajectory: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("requested range exceeds stored steps: need {needed}, have {available}")]
    Range { needed: usize, available: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::OutsideDomain { .. } => "outside_domain",
            Error::RheologySingular { .. } => "rheology_singular",
            Error::Data(_) => "data",
            Error::LinearSolver(_) => "linear_solver",
            Error::NewtonNonConvergence { .. } => "newton_non_convergence",
            Error::EigenNonConvergence { .. } => "eigen_non_convergence",
            Error::Step { source, .. } | Error::Trajectory { source, .. } => source.kind(),
            Error::Range { .. } => "range",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}
