//! The two plug-in estimators evaluated on a single vector of cell counts.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CellProbs, VStructParams};

/// Counts `N_0..N_7` of sampled binary vectors, indexed by `4X + 2Z + Y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OutcomeCounts {
    counts: [u32; 8],
}

impl OutcomeCounts {
    pub fn new(counts: [u32; 8]) -> Self {
        Self { counts }
    }

    pub fn counts(&self) -> &[u32; 8] {
        &self.counts
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }

    pub fn stratum(&self, x: usize, z: usize) -> u32 {
        let i = CellProbs::index(x, z, 0);
        self.counts[i] + self.counts[i + 1]
    }

    pub fn x_count(&self, x: usize) -> u32 {
        self.stratum(x, 0) + self.stratum(x, 1)
    }

    /// True when one of the two `X` groups is empty, so `R` has a 0/0 ratio.
    pub fn raw_degenerate(&self) -> bool {
        self.x_count(0) == 0 || self.x_count(1) == 0
    }

    /// True when any of the four `(X, Z)` strata is empty.
    pub fn marginal_degenerate(&self) -> bool {
        (0..2).any(|x| (0..2).any(|z| self.stratum(x, z) == 0))
    }
}

/// How an estimator is valued when one of its conditioning groups is empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegeneracyPolicy {
    /// The empty-group ratio is replaced by the true conditional probability.
    PaperConvention,
    /// Degenerate samples are discarded; moments are conditional on non-degeneracy.
    Drop,
    /// The empty-group ratio is set to zero.
    Zero,
}

impl DegeneracyPolicy {
    pub const ALL: [DegeneracyPolicy; 3] = [
        DegeneracyPolicy::PaperConvention,
        DegeneracyPolicy::Drop,
        DegeneracyPolicy::Zero,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DegeneracyPolicy::PaperConvention => "paper-convention",
            DegeneracyPolicy::Drop => "drop",
            DegeneracyPolicy::Zero => "zero",
        }
    }
}

impl fmt::Display for DegeneracyPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DegeneracyPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-convention" | "paper" => Ok(DegeneracyPolicy::PaperConvention),
            "drop" => Ok(DegeneracyPolicy::Drop),
            "zero" => Ok(DegeneracyPolicy::Zero),
            other => Err(Error::Params(format!(
                "unknown degeneracy policy `{other}` (expected paper-convention, drop or zero)"
            ))),
        }
    }
}

/// The four summands of `M = M11 + M10 - M01 - M00`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MarginalTerm {
    M11,
    M10,
    M01,
    M00,
}

impl MarginalTerm {
    pub const ALL: [MarginalTerm; 4] = [
        MarginalTerm::M11,
        MarginalTerm::M10,
        MarginalTerm::M01,
        MarginalTerm::M00,
    ];

    /// The `(x, z)` stratum whose ratio this term carries.
    pub fn stratum(self) -> (usize, usize) {
        match self {
            MarginalTerm::M11 => (1, 1),
            MarginalTerm::M10 => (1, 0),
            MarginalTerm::M01 => (0, 1),
            MarginalTerm::M00 => (0, 0),
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            MarginalTerm::M11 | MarginalTerm::M10 => 1.0,
            MarginalTerm::M01 | MarginalTerm::M00 => -1.0,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            MarginalTerm::M11 => "M11",
            MarginalTerm::M10 => "M10",
            MarginalTerm::M01 => "M01",
            MarginalTerm::M00 => "M00",
        }
    }
}

/// `R = R1 - R0` evaluated on one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawEstimate {
    pub r1: f64,
    pub r0: f64,
}

impl RawEstimate {
    pub fn value(&self) -> f64 {
        self.r1 - self.r0
    }
}

/// `M` evaluated on one sample, kept as its four summands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalEstimate {
    pub terms: [f64; 4],
}

impl MarginalEstimate {
    pub fn value(&self) -> f64 {
        self.terms[0] + self.terms[1] - self.terms[2] - self.terms[3]
    }
}

fn ratio(successes: u32, trials: u32, fallback: f64, policy: DegeneracyPolicy) -> Option<f64> {
    if trials > 0 {
        return Some(f64::from(successes) / f64::from(trials));
    }
    match policy {
        DegeneracyPolicy::PaperConvention => Some(fallback),
        DegeneracyPolicy::Drop => None,
        DegeneracyPolicy::Zero => Some(0.0),
    }
}

/// Raw-conditionals estimator; `None` only under [`DegeneracyPolicy::Drop`].
pub fn raw_estimate(
    counts: &OutcomeCounts,
    params: &VStructParams,
    policy: DegeneracyPolicy,
) -> Option<RawEstimate> {
    let c = counts.counts();
    let y1 = c[5] + c[7];
    let y0 = c[1] + c[3];
    let r1 = ratio(y1, counts.x_count(1), params.y_given_x(1), policy)?;
    let r0 = ratio(y0, counts.x_count(0), params.y_given_x(0), policy)?;
    Some(RawEstimate { r1, r0 })
}

/// Marginalisation estimator; `None` only under [`DegeneracyPolicy::Drop`].
pub fn marginal_estimate(
    counts: &OutcomeCounts,
    params: &VStructParams,
    policy: DegeneracyPolicy,
) -> Option<MarginalEstimate> {
    let c = counts.counts();
    let n = f64::from(counts.total());
    let z_share = [
        f64::from(counts.stratum(0, 0) + counts.stratum(1, 0)) / n,
        f64::from(counts.stratum(0, 1) + counts.stratum(1, 1)) / n,
    ];
    let mut terms = [0.0; 4];
    for term in MarginalTerm::ALL {
        let (x, z) = term.stratum();
        let yes = c[CellProbs::index(x, z, 1)];
        let rho = ratio(yes, counts.stratum(x, z), params.y_given(x, z), policy)?;
        terms[term.index()] = rho * z_share[z];
    }
    Some(MarginalEstimate { terms })
}
