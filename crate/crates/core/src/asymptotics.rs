//! Large-`N` expansions, the crossover strength `C*`, and detectability of the
//! `Z -> Y` edge under AIC and BIC.
//!
//! Everything here is stated in the `(q0, q1, C)` parameterisation. Let
//! `s = 2 p_Z - 1` and `K = p_X / (q1 (1 - q1)) + (1 - p_X) / (q0 (1 - q0))`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact_moments::ExactMoments;
use crate::model::{ReparamQC, DEFAULT_INTERIOR_EPS};

fn interior(r: &ReparamQC) -> Result<()> {
    r.require_interior(DEFAULT_INTERIOR_EPS)
}

/// `V[R] * N` through the `1/N` correction.
pub fn var_raw_expansion(r: &ReparamQC, n: u64) -> Result<f64> {
    interior(r)?;
    let nf = n as f64;
    let (px, s) = (r.p_x, 2.0 * r.p_z - 1.0);
    let m1 = r.q1 + s * r.c;
    let m0 = r.q0 + s * r.c;
    Ok(m1 * (1.0 - m1) / px * (1.0 + (1.0 - px) / (nf * px))
        + m0 * (1.0 - m0) / (1.0 - px) * (1.0 + px / (nf * (1.0 - px))))
}

/// `V[M] * N` through the `1/N` correction.
pub fn var_marginal_expansion(r: &ReparamQC, n: u64) -> Result<f64> {
    interior(r)?;
    let nf = n as f64;
    let (px, s, c) = (r.p_x, 2.0 * r.p_z - 1.0, r.c);
    let treated = (r.q1 * (1.0 - r.q1) - c * c) / px * (1.0 + 2.0 * (1.0 - px) / (nf * px))
        - (2.0 * r.q1 - 1.0) * s * c / px;
    let control = (r.q0 * (1.0 - r.q0) - c * c) / (1.0 - px)
        * (1.0 + 2.0 * px / (nf * (1.0 - px)))
        - (2.0 * r.q0 - 1.0) * s * c / (1.0 - px);
    Ok(treated + control)
}

/// Leading behaviour of `(V[M] - V[R]) * N` when `C` is of order `N^{-1/2}`.
pub fn delta_leading(r: &ReparamQC, n: u64) -> Result<f64> {
    interior(r)?;
    let nf = n as f64;
    let px = r.p_x;
    Ok(r.q1 * (1.0 - r.q1) * (1.0 - px) / (nf * px * px)
        + r.q0 * (1.0 - r.q0) * px / (nf * (1.0 - px) * (1.0 - px))
        - 4.0 * r.p_z * (1.0 - r.p_z) * r.c * r.c / (px * (1.0 - px)))
}

/// Positive root in `C` of [`delta_leading`].
pub fn c_star(r: &ReparamQC, n: u64) -> Result<f64> {
    if r.p_z <= 0.0 || r.p_z >= 1.0 {
        return Err(Error::domain(format!("C* needs p_z in (0, 1), got {}", r.p_z)));
    }
    interior(r)?;
    let nf = n as f64;
    let px = r.p_x;
    let bracket = r.q1 * (1.0 - r.q1) * (1.0 - px) * (1.0 - px) / px
        + r.q0 * (1.0 - r.q0) * px * px / (1.0 - px);
    Ok((bracket / (4.0 * nf * r.p_z * (1.0 - r.p_z))).sqrt())
}

/// Fisher information per sample for `C`, the `K` above.
pub fn edge_information(r: &ReparamQC) -> Result<f64> {
    interior(r)?;
    Ok(r.p_x / (r.q1 * (1.0 - r.q1)) + (1.0 - r.p_x) / (r.q0 * (1.0 - r.q0)))
}

/// `|C|` at which the quadratic `E[dAIC]` crosses zero: `N K C^2 = 1`.
pub fn c_aic(r: &ReparamQC, n: u64) -> Result<f64> {
    Ok((1.0 / (n as f64 * edge_information(r)?)).sqrt())
}

/// `|C|` at which the quadratic `E[dBIC] = E[dAIC] + ln N` crosses zero.
pub fn c_bic(r: &ReparamQC, n: u64) -> Result<f64> {
    let nf = n as f64;
    Ok(((1.0 + nf.ln()) / (nf * edge_information(r)?)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogLikForm {
    /// Sum of per-stratum Bernoulli divergences from the edge-free conditional `q_x`.
    ExactKl,
    /// Second-order truncation in `C`.
    Quadratic,
}

fn bernoulli_kl(a: f64, b: f64) -> f64 {
    let term = |p: f64, q: f64| if p == 0.0 { 0.0 } else { p * (p / q).ln() };
    term(a, b) + term(1.0 - a, 1.0 - b)
}

/// Expected gain in maximised log-likelihood from adding the `Z -> Y` edge.
pub fn expected_delta_loglik(r: &ReparamQC, n: u64, form: LogLikForm) -> Result<f64> {
    interior(r)?;
    let nf = n as f64;
    match form {
        LogLikForm::Quadratic => Ok(0.5 + 0.5 * nf * edge_information(r)? * r.c * r.c),
        LogLikForm::ExactKl => {
            let py = r.y_probs();
            if let Some(&bad) = py.iter().find(|&&p| p <= 0.0 || p >= 1.0) {
                return Err(Error::domain(format!(
                    "divergence undefined with a conditional on the boundary ({bad})"
                )));
            }
            let q = [r.q0, r.q1];
            let px = [1.0 - r.p_x, r.p_x];
            let pz = [1.0 - r.p_z, r.p_z];
            let mut sum = 0.0;
            for x in 0..2 {
                for z in 0..2 {
                    sum += px[x] * pz[z] * bernoulli_kl(py[2 * x + z], q[x]);
                }
            }
            Ok(0.5 + nf * sum)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    Positive,
    Negative,
}

/// Smallest `|C|` on the given side where exact `delta_relative` changes sign
/// from positive to non-positive, or `None` if no change is found.
///
/// A 256-point scan over `(0, C_max)` brackets the root, then bisection
/// narrows it to `1e-8`.
pub fn crossover_root(r: &ReparamQC, n: u64, side: Side) -> Result<Option<f64>> {
    interior(r)?;
    let exact = ExactMoments::default();
    let sign = match side {
        Side::Positive => 1.0,
        Side::Negative => -1.0,
    };
    let delta = |c: f64| -> Result<f64> {
        let p = r.with_c(sign * c).to_params()?;
        exact.delta_relative(&p, n)
    };
    let c_max = r.c_max() * (1.0 - 1e-9);
    if c_max <= 0.0 {
        return Ok(None);
    }
    const SCAN: usize = 256;
    let mut lo = 0.0;
    let mut f_lo = delta(0.0)?;
    if f_lo <= 0.0 {
        return Ok(Some(0.0));
    }
    for i in 1..=SCAN {
        let hi = c_max * i as f64 / SCAN as f64;
        let f_hi = delta(hi)?;
        if f_hi <= 0.0 {
            let (mut a, mut b) = (lo, hi);
            while b - a > 1e-8 {
                let mid = 0.5 * (a + b);
                if delta(mid)? > 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            return Ok(Some(0.5 * (a + b)));
        }
        lo = hi;
        f_lo = f_hi;
    }
    debug_assert!(f_lo > 0.0);
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    MarginalBetterDetectable,
    RawBetterDetectable,
    RawBetterUndetectable,
    MarginalBetterUndetectable,
}

impl Regime {
    pub fn classify(marginal_better: bool, detectable: bool) -> Self {
        match (marginal_better, detectable) {
            (true, true) => Regime::MarginalBetterDetectable,
            (false, true) => Regime::RawBetterDetectable,
            (false, false) => Regime::RawBetterUndetectable,
            (true, false) => Regime::MarginalBetterUndetectable,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::MarginalBetterDetectable => "marginal-better-detectable",
            Regime::RawBetterDetectable => "raw-better-detectable",
            Regime::RawBetterUndetectable => "raw-better-undetectable",
            Regime::MarginalBetterUndetectable => "marginal-better-undetectable",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the classification in a [`RegimeReport`] was made.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RegimeMethod {
    /// Which variance gap decides "marginal better": always `"exact"`.
    pub variance_gap: &'static str,
    /// Which `E[dl]` form the detectability thresholds come from.
    pub threshold_form: LogLikForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegimeReport {
    pub params: ReparamQC,
    pub n: u64,
    pub vr_expansion: f64,
    pub vm_expansion: f64,
    pub delta_leading: f64,
    /// Exact `(V[M] - V[R]) / V[R]`.
    pub delta_exact: f64,
    pub c_star: f64,
    pub c_aic: f64,
    pub c_bic: f64,
    pub e_delta_loglik: f64,
    pub e_delta_loglik_exact_kl: Option<f64>,
    pub e_delta_aic: f64,
    pub e_delta_bic: f64,
    pub regime_aic: Regime,
    pub regime_bic: Regime,
    pub method: RegimeMethod,
}

pub fn detectability(r: &ReparamQC, n: u64) -> Result<RegimeReport> {
    interior(r)?;
    if n == 0 {
        return Err(Error::domain("sample size must be at least 1"));
    }
    let params = r.to_params()?;
    let delta_exact = ExactMoments::default().delta_relative(&params, n)?;
    let e_dl = expected_delta_loglik(r, n, LogLikForm::Quadratic)?;
    let e_dl_kl = expected_delta_loglik(r, n, LogLikForm::ExactKl).ok();
    let e_delta_aic = 2.0 - 2.0 * e_dl;
    let e_delta_bic = e_delta_aic + (n as f64).ln();
    let marginal_better = delta_exact < 0.0;
    Ok(RegimeReport {
        params: *r,
        n,
        vr_expansion: var_raw_expansion(r, n)?,
        vm_expansion: var_marginal_expansion(r, n)?,
        delta_leading: delta_leading(r, n)?,
        delta_exact,
        c_star: c_star(r, n)?,
        c_aic: c_aic(r, n)?,
        c_bic: c_bic(r, n)?,
        e_delta_loglik: e_dl,
        e_delta_loglik_exact_kl: e_dl_kl,
        e_delta_aic,
        e_delta_bic,
        regime_aic: Regime::classify(marginal_better, e_delta_aic < 0.0),
        regime_bic: Regime::classify(marginal_better, e_delta_bic < 0.0),
        method: RegimeMethod {
            variance_gap: "exact",
            threshold_form: LogLikForm::Quadratic,
        },
    })
}
