use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid node subset: {0}")]
    InvalidSubset(String),

    #[error("invalid selector: {0}")]
    InvalidSelector(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("problem data rejected: {0}")]
    Validation(String),

    /// A standing assumption (R > 0, PSD cost) failed numerically during synthesis.
    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error(
        "steady-state iteration for self-loop {node} did not converge in {iterations} \
         iterations (last change {last_change:e})"
    )]
    Divergence {
        node: String,
        iterations: usize,
        last_change: f64,
    },

    #[error("edge {from}->{to} has delay {delay}; expand relays before building a message plan")]
    MustExpandRelays { from: u32, to: u32, delay: u32 },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("instance has {dim} decision variables, above the oracle cap of {cap}")]
    Guardrail { dim: usize, cap: usize },

    #[error("horizon error: {0}")]
    Horizon(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
