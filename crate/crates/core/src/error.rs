use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    /// A twist cocycle whose transition maps do not commute up to the declared central element.
    #[error("inconsistent twist on axes ({mu}, {nu}): {detail}")]
    Topology { mu: usize, nu: usize, detail: String },

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("unsupported scalar kind: {0}")]
    UnsupportedKind(String),

    #[error("archive does not cover the requested window: {0}")]
    Coverage(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("solver error: {0}")]
    Solver(String),

    /// The adaptive integrator rejected a step at `dt_min`.
    #[error("stiffness stop at t = {t}: step rejected at dt_min = {dt}")]
    Stiff { t: f64, dt: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
