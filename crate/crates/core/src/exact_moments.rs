//! Closed-form finite-sample moments of the raw-conditionals estimator `R` and
//! the marginalisation estimator `M`.
//!
//! All closed forms are exact under [`DegeneracyPolicy::PaperConvention`]:
//! an empty conditioning group contributes its true conditional probability.
//! Under that convention `R1` and `R0` are conditionally unbiased given the
//! group sizes, which is what makes `E[R]`, `C[R1, R0] = 0` and the
//! `S(N, p_X)` form of `V[R]` exact at every `N`.
//!
//! For `M` the per-stratum variance carries a boundary term
//! `-2 v w (1 - z)^(N - 1) / N` (stratum mass `z`, complementary stratum mass
//! `w`, Bernoulli variance `v`) coming from samples where the stratum is
//! empty. It vanishes exponentially in `N`; [`ExactMoments::var_marginal`]
//! includes it, [`ExactMoments::var_marginal_thirteen_term`] is the
//! thirteen-term expression without it.
//!
//! [`DegeneracyPolicy::PaperConvention`]: crate::estimators::DegeneracyPolicy::PaperConvention

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{DegeneracyPolicy, MarginalTerm};
use crate::model::{CellProbs, VStructParams, DEFAULT_INTERIOR_EPS};
use crate::oracle;
use crate::special_sums::{hyp_form, pos_binom_recip};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Raw,
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorMoments {
    pub mean: f64,
    pub variance: f64,
    pub n: u64,
    pub kind: EstimatorKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RawVarianceBounds {
    /// Present only inside the window `(1 + sqrt 3) / N < p_X < (N - 1 - sqrt 3) / N`.
    pub lower: Option<f64>,
    pub upper: f64,
}

/// Covariance table of `(M11, M10, M01, M00)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarginalCovariance {
    pub table: [[f64; 4]; 4],
}

impl MarginalCovariance {
    pub fn get(&self, a: MarginalTerm, b: MarginalTerm) -> f64 {
        self.table[a.index()][b.index()]
    }

    /// `Var[M11 + M10 - M01 - M00]` assembled from the table.
    pub fn total_variance(&self) -> f64 {
        let mut v = 0.0;
        for a in MarginalTerm::ALL {
            for b in MarginalTerm::ALL {
                v += a.sign() * b.sign() * self.get(a, b);
            }
        }
        v
    }
}

/// Per-stratum pieces of `V[M]`.
struct Stratum {
    /// `p_a p_b / (p_a + p_b)`, i.e. `v z`.
    cross: f64,
    /// Bernoulli variance of `Y` in the stratum.
    v: f64,
    mass: f64,
    /// Mass of the stratum with the other `X` value and the same `Z` value.
    complement: f64,
    /// `p(Z = z)` for this stratum's `z`.
    pz: f64,
}

impl Stratum {
    fn new(cells: &CellProbs, params: &VStructParams, term: MarginalTerm) -> Self {
        let (x, z) = term.stratum();
        let a = cells[CellProbs::index(x, z, 0)];
        let b = cells[CellProbs::index(x, z, 1)];
        let mass = a + b;
        Self {
            cross: a * b / mass,
            v: a * b / (mass * mass),
            mass,
            complement: cells.stratum(1 - x, z),
            pz: if z == 1 { params.p_z() } else { 1.0 - params.p_z() },
        }
    }

    /// The two hypergeometric terms plus the rational remainder, times `N`.
    fn thirteen_term_part(&self, n: u64) -> Result<f64> {
        let w = self.complement;
        Ok(self.cross * w * hyp_form(n, 1, self.mass)?
            + self.cross * w * w * hyp_form(n, 2, self.mass)?
            + self.v * (w + self.pz))
    }

    /// Contribution of samples where this stratum is empty, times `N`.
    fn boundary_part(&self, n: u64) -> f64 {
        let empty = ((n - 1) as f64 * (-self.mass).ln_1p()).exp();
        -2.0 * self.v * self.complement * empty
    }
}

/// Closed-form moments with a configurable strict-interior band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactMoments {
    pub eps: f64,
}

impl Default for ExactMoments {
    fn default() -> Self {
        Self {
            eps: DEFAULT_INTERIOR_EPS,
        }
    }
}

impl ExactMoments {
    pub fn with_eps(eps: f64) -> Self {
        Self { eps }
    }

    pub fn mean_raw(&self, params: &VStructParams) -> Result<f64> {
        params.require_interior_x(self.eps)?;
        let c = params.cell_probs();
        Ok((c[5] + c[7]) / params.p_x() - (c[1] + c[3]) / (1.0 - params.p_x()))
    }

    pub fn var_raw(&self, params: &VStructParams, n: u64) -> Result<f64> {
        params.require_interior_x(self.eps)?;
        if n == 0 {
            return Err(Error::domain("sample size must be at least 1"));
        }
        let c = params.cell_probs();
        let px = params.p_x();
        let treated = (c[5] + c[7]) * (c[4] + c[6]) / (px * px);
        let control = (c[1] + c[3]) * (c[0] + c[2]) / ((1.0 - px) * (1.0 - px));
        Ok(treated * pos_binom_recip(n, px)? + control * pos_binom_recip(n, 1.0 - px)?)
    }

    pub fn raw(&self, params: &VStructParams, n: u64) -> Result<EstimatorMoments> {
        Ok(EstimatorMoments {
            mean: self.mean_raw(params)?,
            variance: self.var_raw(params, n)?,
            n,
            kind: EstimatorKind::Raw,
        })
    }

    pub fn var_raw_bounds(&self, params: &VStructParams, n: u64) -> Result<RawVarianceBounds> {
        params.require_interior_x(self.eps)?;
        if n == 0 {
            return Err(Error::domain("sample size must be at least 1"));
        }
        let c = params.cell_probs();
        let px = params.p_x();
        let nf = n as f64;
        let base = (c[5] + c[7]) * (c[4] + c[6]) / (px.powi(3) * (nf + 1.0))
            + (c[1] + c[3]) * (c[0] + c[2]) / ((1.0 - px).powi(3) * (nf + 1.0));
        let sqrt3 = 3f64.sqrt();
        let in_window = (1.0 + sqrt3) / nf < px && px < (nf - 1.0 - sqrt3) / nf;
        Ok(RawVarianceBounds {
            lower: in_window.then_some(base),
            upper: 2.0 * base,
        })
    }

    pub fn mean_marginal(&self, params: &VStructParams) -> Result<f64> {
        params.require_interior_strata(self.eps)?;
        let c = params.cell_probs();
        let pz = params.p_z();
        Ok(c[7] / (c[6] + c[7]) * pz + c[5] / (c[4] + c[5]) * (1.0 - pz)
            - c[3] / (c[2] + c[3]) * pz
            - c[1] / (c[0] + c[1]) * (1.0 - pz))
    }

    fn strata(&self, params: &VStructParams, n: u64) -> Result<(CellProbs, [Stratum; 4])> {
        params.require_interior_strata(self.eps)?;
        if n < 3 {
            return Err(Error::domain(format!(
                "closed-form V[M] needs N >= 3, got {n}; use the oracle for smaller samples"
            )));
        }
        let cells = params.cell_probs();
        let strata = MarginalTerm::ALL.map(|t| Stratum::new(&cells, params, t));
        Ok((cells, strata))
    }

    /// The squared-bracket term `[p7/(p6+p7) - p5/(p4+p5) - p3/(p2+p3) + p1/(p0+p1)]^2 p_Z (1 - p_Z)`.
    fn z_share_part(cells: &CellProbs, pz: f64) -> f64 {
        let d = cells[7] / (cells[6] + cells[7]) - cells[5] / (cells[4] + cells[5])
            - cells[3] / (cells[2] + cells[3])
            + cells[1] / (cells[0] + cells[1]);
        d * d * pz * (1.0 - pz)
    }

    /// Thirteen-term expression for `V[M]` without the empty-stratum boundary
    /// term. Exceeds the exact variance by an amount decaying like `(1 - z)^N`.
    pub fn var_marginal_thirteen_term(&self, params: &VStructParams, n: u64) -> Result<f64> {
        let (cells, strata) = self.strata(params, n)?;
        let mut total = Self::z_share_part(&cells, params.p_z());
        for s in &strata {
            total += s.thirteen_term_part(n)?;
        }
        Ok(total / n as f64)
    }

    /// `sum over strata of -2 v w (1 - z)^(N - 1) / N`; always `<= 0`.
    pub fn empty_stratum_correction(&self, params: &VStructParams, n: u64) -> Result<f64> {
        let (_, strata) = self.strata(params, n)?;
        Ok(strata.iter().map(|s| s.boundary_part(n)).sum::<f64>() / n as f64)
    }

    /// Exact `V[M]` at sample size `n >= 3`.
    pub fn var_marginal(&self, params: &VStructParams, n: u64) -> Result<f64> {
        let (cells, strata) = self.strata(params, n)?;
        let mut total = Self::z_share_part(&cells, params.p_z());
        for s in &strata {
            total += s.thirteen_term_part(n)? + s.boundary_part(n);
        }
        Ok((total / n as f64).max(0.0))
    }

    pub fn marginal(&self, params: &VStructParams, n: u64) -> Result<EstimatorMoments> {
        Ok(EstimatorMoments {
            mean: self.mean_marginal(params)?,
            variance: self.var_marginal(params, n)?,
            n,
            kind: EstimatorKind::Marginal,
        })
    }

    /// Covariances of the four summands of `M`.
    ///
    /// Terms from different `Z` strata only interact through the `Z` share,
    /// giving `-E[a] E[b] / N`; terms sharing a `Z` stratum pick up
    /// `+p(Y | a) p(Y | b) p_Z (1 - p_Z) / N`.
    pub fn covariance_components(&self, params: &VStructParams, n: u64) -> Result<MarginalCovariance> {
        let (_, strata) = self.strata(params, n)?;
        let nf = n as f64;
        let pz = params.p_z();
        let z_var = pz * (1.0 - pz);
        let y = |t: MarginalTerm| {
            let (x, z) = t.stratum();
            params.y_given(x, z)
        };
        let mean = |t: MarginalTerm| {
            let (_, z) = t.stratum();
            y(t) * if z == 1 { pz } else { 1.0 - pz }
        };

        let mut table = [[0.0; 4]; 4];
        for a in MarginalTerm::ALL {
            for b in MarginalTerm::ALL {
                let (ia, ib) = (a.index(), b.index());
                table[ia][ib] = if a == b {
                    let s = &strata[ia];
                    let yy = y(a);
                    (s.thirteen_term_part(n)? + s.boundary_part(n) + yy * yy * z_var) / nf
                } else if a.stratum().1 == b.stratum().1 {
                    y(a) * y(b) * z_var / nf
                } else {
                    -mean(a) * mean(b) / nf
                };
            }
        }
        Ok(MarginalCovariance { table })
    }

    /// Relative variance gap `(V[M] - V[R]) / V[R]`; negative when marginalising wins.
    pub fn delta_relative(&self, params: &VStructParams, n: u64) -> Result<f64> {
        let vr = self.var_raw(params, n)?;
        if vr <= 0.0 {
            return Err(Error::domain("V[R] = 0, relative difference undefined"));
        }
        Ok((self.var_marginal(params, n)? - vr) / vr)
    }
}

pub fn exact_mean_raw(params: &VStructParams) -> Result<f64> {
    ExactMoments::default().mean_raw(params)
}

pub fn exact_var_raw(params: &VStructParams, n: u64) -> Result<f64> {
    ExactMoments::default().var_raw(params, n)
}

pub fn var_raw_bounds(params: &VStructParams, n: u64) -> Result<RawVarianceBounds> {
    ExactMoments::default().var_raw_bounds(params, n)
}

pub fn exact_mean_marginal(params: &VStructParams) -> Result<f64> {
    ExactMoments::default().mean_marginal(params)
}

pub fn exact_var_marginal(params: &VStructParams, n: u64) -> Result<f64> {
    ExactMoments::default().var_marginal(params, n)
}

pub fn covariance_components(params: &VStructParams, n: u64) -> Result<MarginalCovariance> {
    ExactMoments::default().covariance_components(params, n)
}

pub fn delta_relative(params: &VStructParams, n: u64) -> Result<f64> {
    ExactMoments::default().delta_relative(params, n)
}

/// `C[R1, R0]` computed by full enumeration under the paper convention
/// (zero up to rounding); limited to `n <= oracle::DEFAULT_N_MAX`.
pub fn raw_cross_covariance(params: &VStructParams, n: u32) -> Result<f64> {
    params.require_interior_x(DEFAULT_INTERIOR_EPS)?;
    let o = oracle::enumerate_moments(params, n, DegeneracyPolicy::PaperConvention)?;
    Ok(o.raw()?.cov_r1_r0)
}
