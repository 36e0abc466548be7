//! Seeded simulation of the two estimators at realistic sample sizes.
//!
//! Replicate `r` draws from its own ChaCha8 stream: key = `seed`, stream id =
//! `r`. Streams do not depend on scheduling, so results are bit-identical for
//! any worker count. Per-replicate values are collected in index order and
//! reduced serially.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{marginal_estimate, raw_estimate, DegeneracyPolicy, OutcomeCounts};
use crate::model::{CellProbs, VStructParams};
use crate::numeric::{with_threads, KahanSum};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McConfig {
    pub replicates: u64,
    pub n: u32,
    pub seed: u64,
    pub policy: DegeneracyPolicy,
    /// Worker threads; 0 uses the global rayon pool.
    pub threads: usize,
}

impl McConfig {
    pub fn new(replicates: u64, n: u32, seed: u64) -> Self {
        Self {
            replicates,
            n,
            seed,
            policy: DegeneracyPolicy::Drop,
            threads: 0,
        }
    }

    pub fn policy(mut self, policy: DegeneracyPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn threads(mut self, threads: usize) -> Self {
        self.threads = threads;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::domain("need at least one replicate"));
        }
        if self.n == 0 {
            return Err(Error::domain("sample size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimatorSummary {
    pub mean: f64,
    /// Unbiased sample variance over the retained replicates.
    pub variance: f64,
    pub variance_se: f64,
    /// Replicates with an empty conditioning group for this estimator.
    pub degenerate: u64,
    /// Replicates that entered the moments.
    pub used: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McResult {
    pub config: McConfig,
    pub raw: McEstimatorSummary,
    pub marginal: McEstimatorSummary,
}

/// Random stream for one replicate.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// One multinomial draw over the eight cells by sequential binomial conditioning.
pub fn sample_counts<R: rand::Rng + ?Sized>(cells: &CellProbs, n: u32, rng: &mut R) -> OutcomeCounts {
    let mut counts = [0u32; 8];
    let mut remaining = u64::from(n);
    let mut mass_left = 1.0f64;
    for (i, &p) in cells.as_array().iter().enumerate().take(7) {
        if remaining == 0 {
            break;
        }
        let q = if mass_left > 0.0 { (p / mass_left).clamp(0.0, 1.0) } else { 1.0 };
        let k = if q >= 1.0 {
            remaining
        } else if q <= 0.0 {
            0
        } else {
            Binomial::new(remaining, q).expect("q in (0, 1)").sample(rng)
        };
        counts[i] = k as u32;
        remaining -= k;
        mass_left -= p;
    }
    counts[7] += remaining as u32;
    OutcomeCounts::new(counts)
}

/// Standard error of the sample variance, `SE^2 = (m4 - (r-3)/(r-1) s^4) / r`.
pub fn variance_standard_error(samples: &[f64]) -> Result<f64> {
    let r = samples.len();
    if r < 2 {
        return Err(Error::domain("standard error of a variance needs at least 2 samples"));
    }
    let rf = r as f64;
    let mean = samples.iter().copied().collect::<KahanSum>().value() / rf;
    let mut m2 = KahanSum::default();
    let mut m4 = KahanSum::default();
    for &x in samples {
        let d = x - mean;
        let d2 = d * d;
        m2.add(d2);
        m4.add(d2 * d2);
    }
    let s2 = m2.value() / (rf - 1.0);
    let m4 = m4.value() / rf;
    let se2 = (m4 - (rf - 3.0) / (rf - 1.0) * s2 * s2) / rf;
    Ok(se2.max(0.0).sqrt())
}

fn summarize(values: &[f64], degenerate: u64, estimator: &'static str, replicates: u64) -> Result<McEstimatorSummary> {
    if values.is_empty() {
        return Err(Error::AllDegenerate {
            estimator,
            replicates,
        });
    }
    let rf = values.len() as f64;
    let mean = values.iter().copied().collect::<KahanSum>().value() / rf;
    let (variance, variance_se) = if values.len() >= 2 {
        let ss: KahanSum = values.iter().map(|&x| (x - mean) * (x - mean)).collect();
        (ss.value() / (rf - 1.0), variance_standard_error(values)?)
    } else {
        (0.0, f64::NAN)
    };
    Ok(McEstimatorSummary {
        mean,
        variance,
        variance_se,
        degenerate,
        used: values.len() as u64,
    })
}

struct Draw {
    raw: Option<f64>,
    marginal: Option<f64>,
    raw_degenerate: bool,
    marginal_degenerate: bool,
}

fn draw(params: &VStructParams, cells: &CellProbs, cfg: &McConfig, replicate: u64) -> Draw {
    let mut rng = replicate_rng(cfg.seed, replicate);
    let counts = sample_counts(cells, cfg.n, &mut rng);
    Draw {
        raw: raw_estimate(&counts, params, cfg.policy).map(|r| r.value()),
        marginal: marginal_estimate(&counts, params, cfg.policy).map(|m| m.value()),
        raw_degenerate: counts.raw_degenerate(),
        marginal_degenerate: counts.marginal_degenerate(),
    }
}

pub fn simulate(params: &VStructParams, cfg: &McConfig) -> Result<McResult> {
    cfg.validate()?;
    let cells = params.cell_probs();
    let run = || -> Vec<Draw> {
        (0..cfg.replicates)
            .into_par_iter()
            .map(|r| draw(params, &cells, cfg, r))
            .collect()
    };
    let draws = with_threads(cfg.threads, run)?;

    let raw: Vec<f64> = draws.iter().filter_map(|d| d.raw).collect();
    let marginal: Vec<f64> = draws.iter().filter_map(|d| d.marginal).collect();
    let raw_deg = draws.iter().filter(|d| d.raw_degenerate).count() as u64;
    let marg_deg = draws.iter().filter(|d| d.marginal_degenerate).count() as u64;

    Ok(McResult {
        config: *cfg,
        raw: summarize(&raw, raw_deg, "raw", cfg.replicates)?,
        marginal: summarize(&marginal, marg_deg, "marginal", cfg.replicates)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn same_seed_same_result() {
        let p = VStructParams::new(0.4, 0.6, [0.2, 0.4, 0.6, 0.8]).unwrap();
        let cfg = McConfig::new(2000, 30, 7);
        assert_eq!(simulate(&p, &cfg).unwrap(), simulate(&p, &cfg).unwrap());
        let other = simulate(&p, &McConfig::new(2000, 30, 8)).unwrap();
        assert_ne!(other.raw.mean, simulate(&p, &cfg).unwrap().raw.mean);
    }

    #[test]
    fn thread_count_does_not_matter() {
        let p = VStructParams::new(0.3, 0.5, [0.1, 0.5, 0.5, 0.9]).unwrap();
        let base = McConfig::new(5000, 20, 99);
        let serial = simulate(&p, &base.threads(1)).unwrap();
        let parallel = simulate(&p, &base.threads(4)).unwrap();
        assert_eq!(serial.raw, parallel.raw);
        assert_eq!(serial.marginal, parallel.marginal);
    }

    #[test]
    fn counts_sum_to_n() {
        let p = VStructParams::new(0.3, 0.5, [0.0, 1.0, 0.5, 0.9]).unwrap();
        let cells = p.cell_probs();
        let mut rng = replicate_rng(1, 0);
        for n in [1u32, 5, 100, 10_000] {
            let c = sample_counts(&cells, n, &mut rng);
            assert_eq!(c.total(), n);
            assert_eq!(c.counts()[1], 0, "zero-probability cell drawn");
        }
    }

    #[test]
    fn counts_have_multinomial_means() {
        let p = VStructParams::new(0.3, 0.6, [0.2, 0.4, 0.7, 0.9]).unwrap();
        let cells = p.cell_probs();
        let reps = 20_000u64;
        let n = 50u32;
        let mut sums = [0u64; 8];
        for r in 0..reps {
            let c = sample_counts(&cells, n, &mut replicate_rng(3, r));
            for (s, k) in sums.iter_mut().zip(c.counts()) {
                *s += u64::from(*k);
            }
        }
        for i in 0..8 {
            let mean = sums[i] as f64 / reps as f64;
            let expect = f64::from(n) * cells[i];
            let sd = (f64::from(n) * cells[i] * (1.0 - cells[i]) / reps as f64).sqrt();
            assert!((mean - expect).abs() < 5.0 * sd, "cell {i}: {mean} vs {expect}");
        }
    }

    #[test]
    fn deterministic_outcome() {
        let p = VStructParams::new(0.5, 0.5, [1.0; 4]).unwrap();
        let res = simulate(&p, &McConfig::new(1000, 100, 5)).unwrap();
        assert_eq!(res.raw.variance, 0.0);
        assert!(res.marginal.variance < 1e-30);
        assert_eq!(res.raw.degenerate, 0);
        assert_eq!(res.marginal.degenerate, 0);
    }

    #[test]
    fn all_degenerate_under_drop() {
        let p = VStructParams::new(0.5, 0.5, [0.5; 4]).unwrap();
        let err = simulate(&p, &McConfig::new(100, 1, 5)).unwrap_err();
        assert!(matches!(err, Error::AllDegenerate { estimator: "raw", .. }));
        let ok = simulate(&p, &McConfig::new(100, 1, 5).policy(DegeneracyPolicy::PaperConvention))
            .unwrap();
        assert_eq!(ok.raw.degenerate, 100);
        assert_eq!(ok.raw.used, 100);
    }

    #[test]
    fn rejects_empty_config() {
        let p = VStructParams::new(0.5, 0.5, [0.5; 4]).unwrap();
        assert!(simulate(&p, &McConfig::new(0, 10, 1)).is_err());
        assert!(simulate(&p, &McConfig::new(10, 0, 1)).is_err());
    }

    #[test]
    fn variance_se_edge_cases() {
        assert_eq!(variance_standard_error(&[2.0; 10]).unwrap(), 0.0);
        let two = variance_standard_error(&[0.0, 1.0]).unwrap();
        assert!(two.is_finite() && two > 0.0);
        assert!(variance_standard_error(&[1.0]).is_err());
    }

    #[test]
    fn variance_se_gaussian() {
        let mut rng = replicate_rng(11, 0);
        let sigma = 1.7;
        let r = 200_000;
        let xs: Vec<f64> = (0..r)
            .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let se = variance_standard_error(&xs).unwrap();
        let expect = sigma * sigma * (2.0 / r as f64).sqrt();
        assert!((se / expect - 1.0).abs() < 0.03, "{se} vs {expect}");
    }
}
