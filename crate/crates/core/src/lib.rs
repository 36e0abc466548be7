//! Finite-sample moments of the two total-causal-effect estimators for the
//! binary v-structure `X -> Y <- Z`: raw conditionals `R` and marginalisation
//! over `Z` (`M`).

pub mod asymptotics;
pub mod error;
pub mod estimators;
pub mod exact_moments;
pub mod model;
pub mod montecarlo;
mod numeric;
pub mod oracle;
pub mod params_io;
pub mod special_sums;
pub mod sweep;

pub use error::{Error, Result};
pub use estimators::{DegeneracyPolicy, MarginalTerm, OutcomeCounts};
pub use exact_moments::{EstimatorKind, EstimatorMoments, ExactMoments};
pub use model::{CellProbs, ReparamQC, VStructParams, DEFAULT_INTERIOR_EPS};
pub use numeric::relative_deviation;
