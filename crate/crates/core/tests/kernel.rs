//! Exact rational references for the binomial reciprocal kernel and its
//! hypergeometric forms.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vstruct_core::special_sums::{hyp_form, pos_binom_recip};

fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

fn int(k: u64) -> BigRational {
    BigRational::from_integer(BigInt::from(k))
}

fn pow(x: &BigRational, e: u64) -> BigRational {
    (0..e).fold(BigRational::one(), |acc, _| acc * x)
}

fn binom(m: u64, k: u64) -> BigRational {
    (0..k).fold(BigRational::one(), |acc, i| acc * int(m - i) / int(i + 1))
}

/// `sum_{k>=1} C(M,k) z^k (1-z)^(M-k) / k` in exact arithmetic.
fn exact_s(m: u64, z: &BigRational) -> BigRational {
    let w = BigRational::one() - z;
    (1..=m).fold(BigRational::zero(), |acc, k| {
        acc + binom(m, k) * pow(z, k) * pow(&w, m - k) / int(k)
    })
}

/// Literal series `F([1,1,a],[2,2],x)` for `a = -m`, term ratio
/// `(1+j)^2 (a+j) / ((2+j)^2 (j+1)) x`.
fn exact_f(m: u64, x: &BigRational) -> BigRational {
    let a = -int(m);
    let mut term = BigRational::one();
    let mut sum = BigRational::one();
    for j in 0..m {
        let j1 = int(j + 1);
        let j2 = int(j + 2);
        term = term * &j1 * &j1 * (&a + int(j)) / (&j2 * &j2 * &j1) * x;
        sum += &term;
    }
    sum
}

fn literal_hyp_form(n: u64, shift: u8, z: &BigRational) -> BigRational {
    let w = BigRational::one() - z;
    let x = -(z / &w);
    match shift {
        0 => int(n) * z * pow(&w, n - 1) * exact_f(n - 1, &x),
        1 => int(n - 1) * pow(&w, n - 2) * exact_f(n - 2, &x),
        _ => int(n - 1) * int(n - 2) * pow(&w, n - 3) * exact_f(n - 3, &x),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

#[test]
fn kernel_matches_rational_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut zs: Vec<f64> = (0..12).map(|_| rng.gen_range(1e-4..1.0)).collect();
    zs.extend([1e-3, 0.5, 0.999, 1.0 - 1e-9]);
    let mut worst = 0.0f64;
    for m in 1..=30 {
        for &z in &zs {
            let exact = exact_s(m, &rational(z)).to_f64().unwrap();
            let got = pos_binom_recip(m, z).unwrap();
            worst = worst.max(rel(got, exact));
        }
    }
    assert!(worst < 1e-13, "worst relative error {worst:e}");
}

#[test]
fn hyp_reductions_match_series() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let zs: Vec<f64> = (0..20).map(|_| rng.gen_range(0.01..0.99)).collect();
    let mut worst = 0.0f64;
    for n in 3..=50 {
        for shift in 0..=2u8 {
            for &z in &zs {
                let exact = literal_hyp_form(n, shift, &rational(z)).to_f64().unwrap();
                let got = hyp_form(n, shift, z).unwrap();
                worst = worst.max(rel(got, exact));
            }
        }
    }
    assert!(worst < 1e-12, "worst relative error {worst:e}");
}

#[test]
fn small_sizes_of_shifted_forms() {
    // N = shift + 1 leaves an empty series, so each form is its prefactor
    let z = rational(0.375);
    for (n, shift) in [(1, 0u8), (2, 1), (3, 2)] {
        let exact = literal_hyp_form(n, shift, &z).to_f64().unwrap();
        assert!(rel(hyp_form(n, shift, 0.375).unwrap(), exact) < 1e-15);
    }
}

#[test]
fn kernel_is_not_monotone_in_size_for_small_sizes() {
    // S(2, z) = 2z - 1.5 z^2 exceeds S(1, z) = z for z < 2/3
    let mut rises = Vec::new();
    for m in 1..200u64 {
        for i in 1..100 {
            let z = i as f64 / 100.0;
            let a = pos_binom_recip(m, z).unwrap();
            let b = pos_binom_recip(m + 1, z).unwrap();
            if b > a * (1.0 + 1e-14) {
                rises.push((m, z));
            }
        }
    }
    let last = rises.iter().map(|r| r.0).max().unwrap_or(0);
    eprintln!("S(M+1,z) > S(M,z) at {} grid points, largest M {last}", rises.len());
    assert!(rises.contains(&(1, 0.5)));
    // on the grid the rise only happens while M z is small
    assert!(rises.iter().all(|&(m, z)| m as f64 * z < 2.0));
}
