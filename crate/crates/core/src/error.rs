use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read config {path}: {source}")]
    ConfigIo {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("cannot parse config {path}: {source}")]
    ConfigParse {
        path: PathBuf,
        source: serde_json::Error,
    },

    #[error("invalid config: invariant `{invariant}` violated ({detail})")]
    InvalidConfig {
        invariant: &'static str,
        detail: String,
    },

    #[error("layout infeasible: no position for {what} after {attempts} attempts")]
    LayoutInfeasible { what: String, attempts: usize },

    #[error("stacked downlink channel is rank deficient (users {users:?}, sigma_min/sigma_max = {ratio:.3e})")]
    RankDeficient { users: Vec<usize>, ratio: f64 },

    #[error("uplink user {user} has a zero effective channel at R-RAU {rrau}")]
    ZeroUplinkChannel { user: usize, rrau: usize },

    #[error("{what} has non-positive denominator {value:e}")]
    NonPositiveDenominator { what: String, value: f64 },

    #[error("compression noise variance of {what} must be strictly positive, got {value:e}")]
    ZeroCompressionNoise { what: String, value: f64 },

    #[error("DAC resolution of {0} bits is outside 1..=16")]
    BitsOutOfRange(u32),

    #[error("no strictly feasible initial point after {steps} shrink steps (binding: {binding})")]
    InfeasibleInit { steps: usize, binding: String },

    #[error("starting point is not strictly feasible: {0}")]
    InfeasibleStart(String),

    #[error("Newton system not positive definite after regularization {0:e}")]
    NewtonFailure(f64),

    #[error("subproblem solve failed at SCA iteration {iteration}: {source}")]
    Subproblem {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("matrix is not Hermitian positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("{failed} of {total} trials failed, above the 5% tolerance")]
    TooManyFailures { failed: usize, total: usize },

    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
