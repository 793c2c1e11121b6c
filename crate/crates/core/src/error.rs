use thiserror::Error;

use crate::eqfree::PlanarPoint;
use crate::manifold::ManifoldCurve;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inputs outside the mathematical domain of an operation (non-finite
    /// values, mismatched grids).
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration: grid alignment, bad step sizes, bad bounds.
    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// Integration produced a non-finite value or left the blow-up guard.
    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("t = {t} outside tabulated range [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },

    /// A query point lies beyond the ends of a curve.
    #[error("point ({x1}, {x2}) is not covered by the curve")]
    Uncovered { x1: f64, x2: f64 },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("Newton iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// The 2x2 Jacobian of the chart map is (numerically) singular.
    #[error("chart is not valid at ({x1}, {x2}): {reason}")]
    ChartValidity { x1: f64, x2: f64, reason: String },

    #[error("singular-value ratio undefined: sigma_2 = {sigma2:e}")]
    UndefinedRatio { sigma2: f64 },

    /// A caller-side precondition is violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Manifold growth could not bracket a new point even at the minimal
    /// search radius. The partial curve is kept for diagnostics.
    #[error("manifold growth stalled at ({}, {}) after {} points", last.x1, last.x2, curve.len())]
    Stall {
        last: PlanarPoint,
        curve: Box<ManifoldCurve>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    /// True for failures originating in numerics rather than inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Integration { .. }
                | Error::NoConvergence { .. }
                | Error::ChartValidity { .. }
                | Error::UndefinedRatio { .. }
                | Error::Stall { .. }
        )
    }
}
