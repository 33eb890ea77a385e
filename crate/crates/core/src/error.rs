use thiserror::Error;

use crate::distribution::DiscreteCircularDistribution;
use crate::entropy::EntropyReport;
use crate::optimizer::KktReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Best iterate carried by solver failures so callers can still persist it.
#[derive(Debug, Clone)]
pub struct BestIterate {
    pub distribution: DiscreteCircularDistribution,
    pub entropy: EntropyReport,
    pub kkt: Option<KktReport>,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid channel: {0}")]
    InvalidChannel(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid quadrature setting: {0}")]
    InvalidQuadrature(String),

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("non-finite integrand value {value} at node {node}")]
    NonFinite { node: String, value: f64 },

    #[error(
        "identity channel (lambda = 1) is excluded: its capacity-achieving input \
         has uniform phase on the circle, not a finite support"
    )]
    IdentityChannel,

    #[error("optimizer did not converge after {iterations} iterations")]
    NotConverged {
        iterations: usize,
        best: Box<BestIterate>,
    },

    #[error("support exhausted: no distribution with at most {max_atoms} atoms passed verification")]
    SupportExhausted {
        max_atoms: usize,
        best: Box<BestIterate>,
    },

    #[error("root bracketing failed; residual samples (R, residual): {samples:?}")]
    Bracketing { samples: Vec<(f64, f64)> },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }

    /// Best iterate attached to a solver failure, if any.
    pub fn best_iterate(&self) -> Option<&BestIterate> {
        match self {
            Error::NotConverged { best, .. } | Error::SupportExhausted { best, .. } => Some(best),
            _ => None,
        }
    }

    /// True for errors caused by bad inputs rather than by a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidChannel(_)
                | Error::InvalidDistribution(_)
                | Error::InvalidQuadrature(_)
                | Error::InvalidArgument { .. }
                | Error::IdentityChannel
                | Error::Json(_)
        )
    }
}
