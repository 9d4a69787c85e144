use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("G inverse is undefined at {value} (domain is ({lower}, +inf))")]
    OutOfDomain { value: f64, lower: f64 },

    #[error("diffusion guard violated: 2*dt*mu/dx^2 = {ratio} > 1")]
    Stability { ratio: f64 },

    #[error("observer state does not match controller `{0}`")]
    ObserverMismatch(&'static str),

    #[error("r = {r} is outside [0, R) with R = {radius}")]
    RadiusOutOfRange { r: f64, radius: f64 },

    #[error(
        "run rejected after {halvings} time-step halvings: monitor rose from {before:e} to {after:e} \
         at t = {time} (dt = {dt:e})"
    )]
    Rejected {
        halvings: u32,
        time: f64,
        before: f64,
        after: f64,
        dt: f64,
    },

    #[error("tolerance infeasible: {0}")]
    InfeasibleTolerance(String),

    #[error("no feasible gains: {0}")]
    InfeasibleGains(String),

    #[error("transfer did not reach the tolerance by t = {t_max}: final X-norm {norm:e}")]
    NotConverged { t_max: f64, norm: f64 },

    #[error("convergence study: {0}")]
    Study(String),

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("expression: {0}")]
    Expression(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Scenario(e.to_string())
    }
}
