use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("resolvent is singular at omega = {omega}")]
    SingularResolvent { omega: f64 },
    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { what: &'static str, iterations: usize, residual: f64 },
    #[error("point is outside the barrier domain: {0}")]
    Domain(String),
    #[error("invalid problem data: {0}")]
    InvalidInput(String),
    #[error("unsupported structure: {0}")]
    Unsupported(String),
    #[error("multiplier structure error: {0}")]
    Structure(String),
    #[error("semidefinite backend failure: {0}")]
    Solver(String),
    #[error("simulation failed at step {step}: {source}")]
    Simulation {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("bisection bracket error ({}): {detail}", if *all_certified { "certified at both ends" } else { "failed at both ends" })]
    Bracket { all_certified: bool, detail: String },
    #[error("certification verdicts are not monotone: {0}")]
    NonMonotone(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<iqc_sdp::SdpError> for Error {
    fn from(e: iqc_sdp::SdpError) -> Self {
        Error::Solver(e.to_string())
    }
}
