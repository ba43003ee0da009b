use std::path::PathBuf;

/// Every failure the library can report. `kind()` gives a stable short tag
/// that the CLI prints on its error line.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("block dimension {dim} exceeds the solver cap of {cap}")]
    Capacity { dim: usize, cap: usize },
    #[error("ill-conditioned system: {0}")]
    IllConditioned(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("coupling slope s = {0} is not supported by the linear coupling model")]
    UnsupportedCoupling(f64),
    #[error("both uncertainty radii are zero; use the non-robust design path")]
    ZeroRadii,
    #[error("jamming thresholds cannot be met for users {users:?}")]
    Infeasible { users: Vec<usize> },
    #[error("none of the {trials} randomization candidates satisfied the jamming constraints")]
    NoFeasibleCandidate { trials: usize },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown scheme '{0}'")]
    UnknownScheme(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("trial with seed {seed}, scheme {scheme}: {source}")]
    Trial {
        seed: u64,
        scheme: String,
        #[source]
        source: Box<Error>,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Dimension(_) => "dimension",
            Error::Capacity { .. } => "capacity",
            Error::IllConditioned(_) => "ill_conditioned",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::UnsupportedCoupling(_) => "unsupported_coupling",
            Error::ZeroRadii => "zero_radii",
            Error::Infeasible { .. } => "infeasible",
            Error::NoFeasibleCandidate { .. } => "no_feasible_candidate",
            Error::Solver(_) => "solver",
            Error::Config(_) => "config",
            Error::UnknownScheme(_) => "unknown_scheme",
            Error::Empty(_) => "empty",
            Error::Io { .. } => "io",
            Error::Trial { source, .. } => source.kind(),
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_are_stable_and_see_through_trial_context() {
        assert_eq!(Error::Infeasible { users: vec![1] }.kind(), "infeasible");
        assert_eq!(Error::Config("x".into()).kind(), "config");
        let wrapped = Error::Trial { seed: 3, scheme: "ios".into(), source: Box::new(Error::ZeroRadii) };
        assert_eq!(wrapped.kind(), "zero_radii");
        assert!(wrapped.to_string().contains("seed 3"));
        let io = Error::Io { path: "a.csv".into(), source: std::io::Error::from(std::io::ErrorKind::NotFound) };
        assert_eq!(io.kind(), "io");
        assert!(io.to_string().starts_with("a.csv"));
    }
}
