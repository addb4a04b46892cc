use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The natural parameter would overflow the link function.
    #[error("natural parameter {eta} is outside the representable range of the {family} link")]
    Range { family: &'static str, eta: f64 },

    #[error("invalid argument: {0}")]
    Domain(String),

    #[error("free-beam root scan found {found} of {wanted} frequencies")]
    RootShortfall { found: usize, wanted: usize },

    #[error(
        "discretized mass matrix is not positive definite; \
         retry with a quadrature order above {quad_order}"
    )]
    Discretization { quad_order: usize },

    #[error("penalized likelihood fit did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        last: Vec<f64>,
    },

    #[error("penalized Hessian is numerically singular")]
    Conditioning,

    #[error("GCV score is degenerate at lambda = {lambda:e}: tr(I - A) vanishes")]
    DegenerateScore { lambda: f64 },

    #[error("no valid GCV score on the lambda grid")]
    Selection,

    #[error("asymptotic radius is degenerate: radicand {radicand:e} is negative")]
    DegenerateRadius { radicand: f64 },

    #[error("{failures} of {replications} replicates failed at n = {n}")]
    Experiment {
        n: usize,
        failures: usize,
        replications: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed configuration: {0}")]
    Config(#[from] serde_json::Error),

    #[error("malformed input: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
