use thiserror::Error;

/// Errors surfaced by schedules, distributions, samplers and solvers.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("time index {t} out of range 0..={max}")]
    TimeIndex { t: usize, max: usize },

    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error("sigma_{t} = 0: step is deterministic, path-wise KL and the reward log-trick are undefined")]
    DeterministicStep { t: usize },

    #[error("degenerate reward: pretrained std {std:.3e} below 1e-8, cannot normalize")]
    DegenerateReward { std: f64 },

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("numerical divergence: {0}")]
    Diverged(String),

    #[error("support violation: log-density is -inf at sample ({x:.4}, {y:.4})")]
    SupportViolation { x: f64, y: f64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
