//! Brute-force ground truth: every composition of `N` into the eight cells is
//! enumerated and estimator moments are taken as exact multinomial averages.
//!
//! There are `C(N + 7, 7)` outcomes (50388 at `N = 12`), so this is only
//! meant for small samples. Moments are accumulated in two passes (means,
//! then central moments) with compensated summation; the visiting order is
//! fixed, so results are bit-for-bit deterministic.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{marginal_estimate, raw_estimate};
pub use crate::estimators::{DegeneracyPolicy, MarginalTerm, OutcomeCounts};
use crate::exact_moments::ExactMoments;
use crate::model::VStructParams;
use crate::numeric::{relative_deviation, KahanSum};

pub const DEFAULT_N_MAX: u32 = 12;

/// Agreement required between a closed form and the enumeration.
pub const RECONCILE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct RawOracle {
    pub mean: f64,
    pub variance: f64,
    pub mean_r1: f64,
    pub mean_r0: f64,
    pub var_r1: f64,
    pub var_r0: f64,
    pub cov_r1_r0: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MarginalOracle {
    pub mean: f64,
    pub variance: f64,
    /// Means of `M11, M10, M01, M00`.
    pub term_means: [f64; 4],
    /// Covariance table of `M11, M10, M01, M00`.
    pub term_cov: [[f64; 4]; 4],
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleMoments {
    pub n: u32,
    pub policy: DegeneracyPolicy,
    pub outcomes: u64,
    /// Sum of all enumerated multinomial probabilities (should be 1).
    pub total_probability: f64,
    pub degenerate_probability_raw: f64,
    pub degenerate_probability_marginal: f64,
    /// `None` when every outcome is degenerate under [`DegeneracyPolicy::Drop`].
    pub raw: Option<RawOracle>,
    pub marginal: Option<MarginalOracle>,
}

impl OracleMoments {
    pub fn raw(&self) -> Result<&RawOracle> {
        self.raw
            .as_ref()
            .ok_or_else(|| Error::domain("raw estimator undefined: every outcome is degenerate"))
    }

    pub fn marginal(&self) -> Result<&MarginalOracle> {
        self.marginal.as_ref().ok_or_else(|| {
            Error::domain("marginalisation estimator undefined: every outcome is degenerate")
        })
    }
}

/// Calls `visit(counts, probability)` for every outcome with nonzero probability,
/// in lexicographic order of `(N_0, ..., N_7)`.
pub fn for_each_outcome(params: &VStructParams, n: u32, mut visit: impl FnMut(&OutcomeCounts, f64)) {
    let cells = params.cell_probs();
    let ln_p: Vec<f64> = cells.as_array().iter().map(|p| p.ln()).collect();
    let mut ln_fact = vec![0.0f64; n as usize + 1];
    for k in 1..=n as usize {
        ln_fact[k] = ln_fact[k - 1] + (k as f64).ln();
    }

    fn recurse(
        cell: usize,
        remaining: u32,
        log_w: f64,
        counts: &mut [u32; 8],
        ln_p: &[f64],
        ln_fact: &[f64],
        visit: &mut dyn FnMut(&OutcomeCounts, f64),
    ) {
        if cell == 7 {
            let k = remaining;
            if k > 0 && ln_p[7] == f64::NEG_INFINITY {
                return;
            }
            counts[7] = k;
            let term = if k > 0 { f64::from(k) * ln_p[7] } else { 0.0 };
            visit(&OutcomeCounts::new(*counts), (log_w + term - ln_fact[k as usize]).exp());
            return;
        }
        for k in 0..=remaining {
            if k > 0 && ln_p[cell] == f64::NEG_INFINITY {
                break;
            }
            counts[cell] = k;
            let term = if k > 0 { f64::from(k) * ln_p[cell] } else { 0.0 };
            recurse(
                cell + 1,
                remaining - k,
                log_w + term - ln_fact[k as usize],
                counts,
                ln_p,
                ln_fact,
                visit,
            );
        }
        counts[cell] = 0;
    }

    let mut counts = [0u32; 8];
    recurse(0, n, ln_fact[n as usize], &mut counts, &ln_p, &ln_fact, &mut visit);
}

/// Exact estimator moments at sample size `n`, refusing `n > DEFAULT_N_MAX`.
pub fn enumerate_moments(
    params: &VStructParams,
    n: u32,
    policy: DegeneracyPolicy,
) -> Result<OracleMoments> {
    enumerate_moments_up_to(params, n, policy, DEFAULT_N_MAX)
}

pub fn enumerate_moments_up_to(
    params: &VStructParams,
    n: u32,
    policy: DegeneracyPolicy,
    n_max: u32,
) -> Result<OracleMoments> {
    if n == 0 {
        return Err(Error::domain("sample size must be at least 1"));
    }
    if n > n_max {
        return Err(Error::EnumerationTooLarge { n, limit: n_max });
    }

    // Pass 1: masses and means.
    let mut outcomes = 0u64;
    let mut total = KahanSum::default();
    let mut deg_raw = KahanSum::default();
    let mut deg_marg = KahanSum::default();
    let mut w_raw = KahanSum::default();
    let mut w_marg = KahanSum::default();
    let mut s_r1 = KahanSum::default();
    let mut s_r0 = KahanSum::default();
    let mut s_terms = [KahanSum::default(); 4];

    for_each_outcome(params, n, |counts, w| {
        outcomes += 1;
        total.add(w);
        if counts.raw_degenerate() {
            deg_raw.add(w);
        }
        if counts.marginal_degenerate() {
            deg_marg.add(w);
        }
        if let Some(r) = raw_estimate(counts, params, policy) {
            w_raw.add(w);
            s_r1.add(w * r.r1);
            s_r0.add(w * r.r0);
        }
        if let Some(m) = marginal_estimate(counts, params, policy) {
            w_marg.add(w);
            for (acc, t) in s_terms.iter_mut().zip(m.terms) {
                acc.add(w * t);
            }
        }
    });

    let w_raw = w_raw.value();
    let w_marg = w_marg.value();
    let has_raw = w_raw > 0.0;
    let has_marg = w_marg > 0.0;
    let mean_r1 = s_r1.value() / w_raw;
    let mean_r0 = s_r0.value() / w_raw;
    let term_means = s_terms.map(|s| s.value() / w_marg);

    // Pass 2: central second moments.
    let mut c11 = KahanSum::default();
    let mut c00 = KahanSum::default();
    let mut c10 = KahanSum::default();
    let mut cm = [[KahanSum::default(); 4]; 4];
    for_each_outcome(params, n, |counts, w| {
        if has_raw {
            if let Some(r) = raw_estimate(counts, params, policy) {
                let d1 = r.r1 - mean_r1;
                let d0 = r.r0 - mean_r0;
                c11.add(w * d1 * d1);
                c00.add(w * d0 * d0);
                c10.add(w * d1 * d0);
            }
        }
        if has_marg {
            if let Some(m) = marginal_estimate(counts, params, policy) {
                let d: [f64; 4] = std::array::from_fn(|i| m.terms[i] - term_means[i]);
                for i in 0..4 {
                    for j in i..4 {
                        cm[i][j].add(w * d[i] * d[j]);
                    }
                }
            }
        }
    });

    let raw = has_raw.then(|| {
        let var_r1 = c11.value() / w_raw;
        let var_r0 = c00.value() / w_raw;
        let cov = c10.value() / w_raw;
        RawOracle {
            mean: mean_r1 - mean_r0,
            variance: (var_r1 + var_r0 - 2.0 * cov).max(0.0),
            mean_r1,
            mean_r0,
            var_r1,
            var_r0,
            cov_r1_r0: cov,
        }
    });

    let marginal = has_marg.then(|| {
        let mut term_cov = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in i..4 {
                let v = cm[i][j].value() / w_marg;
                term_cov[i][j] = v;
                term_cov[j][i] = v;
            }
        }
        let signs = MarginalTerm::ALL.map(MarginalTerm::sign);
        let mut variance = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                variance += signs[i] * signs[j] * term_cov[i][j];
            }
        }
        MarginalOracle {
            mean: term_means[0] + term_means[1] - term_means[2] - term_means[3],
            variance: variance.max(0.0),
            term_means,
            term_cov,
        }
    });

    Ok(OracleMoments {
        n,
        policy,
        outcomes,
        total_probability: total.value(),
        degenerate_probability_raw: deg_raw.value(),
        degenerate_probability_marginal: deg_marg.value(),
        raw,
        marginal,
    })
}

/// Worst-case disagreement of one policy with the closed forms over a grid.
#[derive(Debug, Clone, Serialize)]
pub struct PolicyDeviation {
    pub policy: DegeneracyPolicy,
    pub mean_raw: f64,
    pub var_raw: f64,
    /// Absolute, since the closed form is exactly zero.
    pub cov_r1_r0: f64,
    pub mean_marginal: f64,
    pub var_marginal: f64,
    pub marginal_cov: f64,
    /// Grid points where the estimator was undefined (all outcomes degenerate).
    pub undefined: usize,
}

impl PolicyDeviation {
    pub fn worst(&self) -> f64 {
        [
            self.mean_raw,
            self.var_raw,
            self.cov_r1_r0,
            self.mean_marginal,
            self.var_marginal,
            self.marginal_cov,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn reconciles(&self) -> bool {
        self.undefined == 0 && self.worst() <= RECONCILE_TOL
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReconciliationReport {
    pub points: usize,
    pub sample_sizes: Vec<u32>,
    pub tolerance: f64,
    pub deviations: Vec<PolicyDeviation>,
    /// The unique policy matching every closed form within tolerance, if any.
    pub reconciled: Option<DegeneracyPolicy>,
    /// Worst relative gap between the thirteen-term variance of `M` (which
    /// omits the empty-stratum boundary term) and the paper-convention oracle.
    pub thirteen_term_var_marginal: f64,
}

/// Compares the oracle under every policy against the closed forms.
///
/// Marginal quantities are only compared for `N >= 3`, where the closed form
/// is defined.
pub fn reconcile_policy(params_set: &[VStructParams], n_set: &[u32]) -> Result<ReconciliationReport> {
    let exact = ExactMoments::default();
    let mut deviations: Vec<PolicyDeviation> = DegeneracyPolicy::ALL
        .iter()
        .map(|&policy| PolicyDeviation {
            policy,
            mean_raw: 0.0,
            var_raw: 0.0,
            cov_r1_r0: 0.0,
            mean_marginal: 0.0,
            var_marginal: 0.0,
            marginal_cov: 0.0,
            undefined: 0,
        })
        .collect();
    let mut thirteen = 0.0f64;

    for params in params_set {
        for &n in n_set {
            let mean_r = exact.mean_raw(params)?;
            let var_r = exact.var_raw(params, u64::from(n))?;
            let marginal_closed = if n >= 3 {
                let nn = u64::from(n);
                Some((
                    exact.mean_marginal(params)?,
                    exact.var_marginal(params, nn)?,
                    exact.covariance_components(params, nn)?,
                    exact.var_marginal_thirteen_term(params, nn)?,
                ))
            } else {
                None
            };

            for dev in deviations.iter_mut() {
                let o = enumerate_moments(params, n, dev.policy)?;
                match &o.raw {
                    Some(raw) => {
                        dev.mean_raw = dev.mean_raw.max(relative_deviation(raw.mean, mean_r));
                        dev.var_raw = dev.var_raw.max(relative_deviation(raw.variance, var_r));
                        dev.cov_r1_r0 = dev.cov_r1_r0.max(raw.cov_r1_r0.abs());
                    }
                    None => dev.undefined += 1,
                }
                let Some((mean_m, var_m, cov, var13)) = &marginal_closed else {
                    continue;
                };
                match &o.marginal {
                    Some(m) => {
                        dev.mean_marginal = dev.mean_marginal.max(relative_deviation(m.mean, *mean_m));
                        dev.var_marginal = dev.var_marginal.max(relative_deviation(m.variance, *var_m));
                        for i in 0..4 {
                            for j in 0..4 {
                                dev.marginal_cov = dev
                                    .marginal_cov
                                    .max(relative_deviation(m.term_cov[i][j], cov.table[i][j]));
                            }
                        }
                        if dev.policy == DegeneracyPolicy::PaperConvention {
                            thirteen = thirteen.max(relative_deviation(*var13, m.variance));
                        }
                    }
                    None => dev.undefined += 1,
                }
            }
        }
    }

    let matching: Vec<_> = deviations.iter().filter(|d| d.reconciles()).collect();
    let reconciled = (matching.len() == 1).then(|| matching[0].policy);
    Ok(ReconciliationReport {
        points: params_set.len(),
        sample_sizes: n_set.to_vec(),
        tolerance: RECONCILE_TOL,
        deviations,
        reconciled,
        thirteen_term_var_marginal: thirteen,
    })
}
