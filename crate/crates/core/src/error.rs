use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("node ({i}, {j}) lacks the stencil for this operator")]
    Stencil { i: usize, j: usize },

    #[error("field has zero mass")]
    ZeroMass,

    #[error("signed component has mass in only one of the two signals")]
    MassMismatchUnresolvable,

    #[error("support rectangle {width:.4} x {height:.4} does not fit in the grid")]
    SupportTooLarge { width: f64, height: f64 },

    #[error("grids do not match")]
    GridMismatch,

    #[error("singular linear system at pivot {pivot} (delta too small or data degenerate)")]
    SingularSystem { pivot: usize },

    #[error("Newton iteration did not converge: {iterations} iterations, residual {residual:.3e}")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("event at t = {time:.4} lies outside the time window")]
    EventOutsideWindow { time: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("trial model {model}: {source}")]
    Trial {
        model: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical solve, as opposed to bad input.
    pub fn is_solver_failure(&self) -> bool {
        match self {
            Error::SingularSystem { .. } | Error::NoConvergence { .. } => true,
            Error::Trial { source, .. } => source.is_solver_failure(),
            _ => false,
        }
    }
}
