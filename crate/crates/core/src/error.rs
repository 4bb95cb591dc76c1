use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    /// The frequency left the region where the swing model is meaningful.
    #[error("frequency collapse at t = {t:.6} s: omega = {omega} pu is below the guard {guard} pu")]
    FrequencyCollapse { t: f64, omega: f64, guard: f64 },

    #[error("delay {delay} s is not an integer multiple of the sample period {dt} s")]
    DelayAlignment { delay: f64, dt: f64 },

    #[error("sample spacing mismatch at t = {t} s: expected {expected} s, got {got} s")]
    SpacingMismatch { t: f64, expected: f64, got: f64 },

    #[error("parameters not yet identifiable: eta1_hat = {eta1} is not above {eps}")]
    NotIdentifiable { eta1: f64, eps: f64 },

    #[error("metric window [{t1}, {t2}] s is not covered by the trace [{start}, {end}] s")]
    WindowOutsideTrace { t1: f64, t2: f64, start: f64, end: f64 },

    #[error("{path}: line {line}: {msg}")]
    Csv { path: String, line: u64, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Fill in the time of a frequency collapse raised below the simulation loop.
    pub(crate) fn at_time(self, t: f64) -> Self {
        match self {
            Error::FrequencyCollapse { omega, guard, .. } => Error::FrequencyCollapse { t, omega, guard },
            other => other,
        }
    }

    /// Process exit code for the error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } => 3,
            Error::Csv { .. } | Error::SpacingMismatch { .. } => 4,
            Error::InvalidParams(_) | Error::InvalidScenario(_) | Error::DelayAlignment { .. } => 5,
            Error::FrequencyCollapse { .. } => 6,
            Error::NotIdentifiable { .. } | Error::WindowOutsideTrace { .. } => 7,
        }
    }

    /// Short category tag printed in front of CLI diagnostics.
    pub fn category(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "io",
            4 => "input",
            5 => "params",
            6 => "simulation",
            _ => "estimation",
        }
    }
}
