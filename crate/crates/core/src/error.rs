use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error(transparent)]
    NonConvergence(Box<NonConvergence>),

    #[error("enumeration of {count} rules exceeds the cap of {cap}")]
    TooLarge { count: u128, cap: u128 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by bad input rather than by the numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::Precondition(_)
                | Error::TooLarge { .. }
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}

impl From<NonConvergence> for Error {
    fn from(e: NonConvergence) -> Self {
        Error::NonConvergence(Box::new(e))
    }
}

/// How an iteration that hit its budget was behaving at the end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Oscillation {
    /// `v_{n+2} == v_n` up to round-off while `v_{n+1} != v_n`.
    PeriodTwo,
    /// The iterates are still moving; more iterations might converge.
    Slow,
}

/// An iterative solver ran out of iterations.
#[derive(Debug, Clone, Error)]
#[error(
    "{solver} did not converge after {iterations} iterations \
     (residual {residual:.3e}, span(v[n+2]-v[n]) = {two_step_gap:.3e}, {diagnosis:?})"
)]
pub struct NonConvergence {
    pub solver: &'static str,
    pub iterations: usize,
    /// Span of the last one-step difference.
    pub residual: f64,
    /// Span of the last two-step difference; zero on a period-2 cycle.
    pub two_step_gap: f64,
    pub diagnosis: Oscillation,
    /// The last iterates, oldest first.
    pub last_iterates: Vec<Vec<f64>>,
}

impl NonConvergence {
    pub(crate) fn from_tail(
        solver: &'static str,
        iterations: usize,
        tail: [&[f64]; 3],
        tolerance: f64,
    ) -> Self {
        let residual = crate::mdp::span_of_diff(tail[1], tail[0]);
        let two_step_gap = crate::mdp::span_of_diff(tail[2], tail[0]);
        let diagnosis = if residual > tolerance && two_step_gap <= 1e-9 * residual.max(1.0) {
            Oscillation::PeriodTwo
        } else {
            Oscillation::Slow
        };
        NonConvergence {
            solver,
            iterations,
            residual,
            two_step_gap,
            diagnosis,
            last_iterates: tail.iter().map(|v| v.to_vec()).collect(),
        }
    }
}
