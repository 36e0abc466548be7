//! Parameterisation of the binary v-structure `X -> Y <- Z`.
//!
//! The joint distribution is fixed by `p(X=1)`, `p(Z=1)` and the four
//! conditionals `p(Y=1 | X, Z)`. Conditionals are indexed by `2X + Z`, so
//! `p_y[0]` is `p(Y=1 | X=0, Z=0)` and `p_y[3]` is `p(Y=1 | X=1, Z=1)`.
//! Multinomial cells are indexed by `4X + 2Z + Y`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default half-width of the excluded boundary band for exact-moment calls.
pub const DEFAULT_INTERIOR_EPS: f64 = 1e-9;

const Y_NAMES: [&str; 4] = ["p_y0", "p_y1", "p_y2", "p_y3"];

fn check_probability(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(Error::InvalidProbability { name, value })
    }
}

pub(crate) fn check_interior(name: &'static str, value: f64, eps: f64) -> Result<()> {
    if value >= eps && value <= 1.0 - eps {
        Ok(())
    } else {
        Err(Error::NotInterior { name, value, eps })
    }
}

/// Probability tables of the v-structure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VStructParams {
    p_x: f64,
    p_z: f64,
    p_y: [f64; 4],
}

impl VStructParams {
    pub fn new(p_x: f64, p_z: f64, p_y: [f64; 4]) -> Result<Self> {
        check_probability("p_x", p_x)?;
        check_probability("p_z", p_z)?;
        for (name, &v) in Y_NAMES.iter().zip(&p_y) {
            check_probability(name, v)?;
        }
        Ok(Self { p_x, p_z, p_y })
    }

    pub fn p_x(&self) -> f64 {
        self.p_x
    }

    pub fn p_z(&self) -> f64 {
        self.p_z
    }

    pub fn p_y(&self) -> [f64; 4] {
        self.p_y
    }

    /// `p(Y=1 | X=x, Z=z)`.
    pub fn y_given(&self, x: usize, z: usize) -> f64 {
        self.p_y[2 * x + z]
    }

    /// `p(Y=1 | X=x)`, marginalised over `Z`. Defined even when `p(X=x) = 0`.
    pub fn y_given_x(&self, x: usize) -> f64 {
        self.p_z * self.y_given(x, 1) + (1.0 - self.p_z) * self.y_given(x, 0)
    }

    /// Rejects parameter points whose exposure probability touches the boundary band.
    pub fn require_interior_x(&self, eps: f64) -> Result<()> {
        check_interior("p_x", self.p_x, eps)
    }

    /// Rejects points where any `(X, Z)` stratum has (nearly) vanishing mass.
    pub fn require_interior_strata(&self, eps: f64) -> Result<()> {
        check_interior("p_x", self.p_x, eps)?;
        check_interior("p_z", self.p_z, eps)
    }

    /// Full strict-interior check on all six table entries.
    pub fn require_interior(&self, eps: f64) -> Result<()> {
        self.require_interior_strata(eps)?;
        for (name, &v) in Y_NAMES.iter().zip(&self.p_y) {
            check_interior(name, v, eps)?;
        }
        Ok(())
    }

    pub fn cell_probs(&self) -> CellProbs {
        let mut p = [0.0; 8];
        for x in 0..2 {
            let px = if x == 1 { self.p_x } else { 1.0 - self.p_x };
            for z in 0..2 {
                let pz = if z == 1 { self.p_z } else { 1.0 - self.p_z };
                let py = self.y_given(x, z);
                p[CellProbs::index(x, z, 0)] = px * pz * (1.0 - py);
                p[CellProbs::index(x, z, 1)] = px * pz * py;
            }
        }
        CellProbs { p }
    }

    /// Total causal effect `p(Y | do(X=1)) - p(Y | do(X=0))` by marginalising over `Z`.
    pub fn true_effect(&self) -> f64 {
        self.p_y[3] * self.p_z + self.p_y[2] * (1.0 - self.p_z)
            - self.p_y[1] * self.p_z
            - self.p_y[0] * (1.0 - self.p_z)
    }

    /// Recovers `(q0, q1, C)` when both `X` strata share the same `Z` effect.
    pub fn to_reparam(&self) -> Option<ReparamQC> {
        let c0 = 0.5 * (self.p_y[1] - self.p_y[0]);
        let c1 = 0.5 * (self.p_y[3] - self.p_y[2]);
        if (c0 - c1).abs() > 1e-12 {
            return None;
        }
        Some(ReparamQC {
            q0: 0.5 * (self.p_y[0] + self.p_y[1]),
            q1: 0.5 * (self.p_y[2] + self.p_y[3]),
            c: c0,
            p_x: self.p_x,
            p_z: self.p_z,
        })
    }
}

impl<'de> Deserialize<'de> for VStructParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            p_x: f64,
            p_z: f64,
            p_y: [f64; 4],
        }
        let raw = Raw::deserialize(d)?;
        VStructParams::new(raw.p_x, raw.p_z, raw.p_y).map_err(serde::de::Error::custom)
    }
}

/// The eight multinomial cell probabilities `p_0..p_7`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellProbs {
    p: [f64; 8],
}

impl CellProbs {
    pub const fn index(x: usize, z: usize, y: usize) -> usize {
        4 * x + 2 * z + y
    }

    pub fn as_array(&self) -> &[f64; 8] {
        &self.p
    }

    pub fn get(&self, i: usize) -> f64 {
        self.p[i]
    }

    pub fn sum(&self) -> f64 {
        self.p.iter().sum()
    }

    /// Mass of the `(X=x, Z=z)` stratum, `p_{4x+2z} + p_{4x+2z+1}`.
    pub fn stratum(&self, x: usize, z: usize) -> f64 {
        let i = Self::index(x, z, 0);
        self.p[i] + self.p[i + 1]
    }

    /// Mass of `X=x`.
    pub fn x_mass(&self, x: usize) -> f64 {
        self.stratum(x, 0) + self.stratum(x, 1)
    }

    /// Mass of `X=x, Y=y` summed over `Z`.
    pub fn xy_mass(&self, x: usize, y: usize) -> f64 {
        self.p[Self::index(x, 0, y)] + self.p[Self::index(x, 1, y)]
    }
}

impl std::ops::Index<usize> for CellProbs {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.p[i]
    }
}

/// Symmetric reparameterisation `p_y = (q0 - C, q0 + C, q1 - C, q1 + C)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReparamQC {
    pub q0: f64,
    pub q1: f64,
    pub c: f64,
    pub p_x: f64,
    pub p_z: f64,
}

impl ReparamQC {
    pub fn new(q0: f64, q1: f64, c: f64, p_x: f64, p_z: f64) -> Result<Self> {
        let r = Self { q0, q1, c, p_x, p_z };
        r.to_params()?;
        Ok(r)
    }

    /// Same as [`ReparamQC::new`] without the validity check; used when sweeping
    /// grids that deliberately leave the admissible region.
    pub fn unchecked(q0: f64, q1: f64, c: f64, p_x: f64, p_z: f64) -> Self {
        Self { q0, q1, c, p_x, p_z }
    }

    pub fn y_probs(&self) -> [f64; 4] {
        [
            self.q0 - self.c,
            self.q0 + self.c,
            self.q1 - self.c,
            self.q1 + self.c,
        ]
    }

    pub fn to_params(&self) -> Result<VStructParams> {
        check_probability("q0", self.q0)?;
        check_probability("q1", self.q1)?;
        if !self.c.is_finite() {
            return Err(Error::Params(format!("C = {} is not finite", self.c)));
        }
        VStructParams::new(self.p_x, self.p_z, self.y_probs())
    }

    /// Largest `|C|` keeping every derived conditional inside `[0, 1]`.
    pub fn c_max(&self) -> f64 {
        self.q0.min(1.0 - self.q0).min(self.q1).min(1.0 - self.q1)
    }

    pub fn with_c(&self, c: f64) -> Self {
        Self { c, ..*self }
    }

    pub fn with_p_x(&self, p_x: f64) -> Self {
        Self { p_x, ..*self }
    }

    /// Rejects points with `p_x`, `p_z`, `q0` or `q1` on the boundary band.
    pub fn require_interior(&self, eps: f64) -> Result<()> {
        check_interior("p_x", self.p_x, eps)?;
        check_interior("p_z", self.p_z, eps)?;
        check_interior("q0", self.q0, eps)?;
        check_interior("q1", self.q1, eps)
    }
}

impl TryFrom<ReparamQC> for VStructParams {
    type Error = Error;

    fn try_from(r: ReparamQC) -> Result<Self> {
        r.to_params()
    }
}
