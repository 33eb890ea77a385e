//! Capacity of constant-envelope signaling over the real 2×2 Gaussian MIMO
//! channel `Y = diag{λ, 1} X + W` with `‖X‖ = R`.
//!
//! The optimal input is discrete on the circle. The crate computes the output
//! entropy functionals in polar output coordinates, searches for the optimal
//! mass points, certifies them against the necessary-and-sufficient
//! conditions, and provides the closed-form companions (norm threshold,
//! water-filling, bounds, degrees of freedom).

pub mod analysis;
pub mod channel;
pub mod distribution;
pub mod entropy;
pub mod error;
pub mod montecarlo;
pub mod optimizer;
pub mod quadrature;

pub use channel::Channel;
pub use distribution::{Atom, DiscreteCircularDistribution, DistributionFile, SymmetryOrbit};
pub use entropy::{EntropyReport, OutputDensity, OutputField};
pub use error::{Error, Result};
pub use optimizer::{CapacityResult, KktReport, SolverConfig};
pub use quadrature::{GridSpec, QuadratureGrid};
