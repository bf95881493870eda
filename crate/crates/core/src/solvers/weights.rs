//! Patankar weight rules and GeCo stage scalings.
//!
//! The steppers only require ρ and σ to be positive and independent of the
//! numerators they divide; everything about the achievable order lives in
//! how these values expand in h. The rules here are the constructions the
//! order checker exercises, not a recommendation list.

use serde::{Deserialize, Serialize};

use super::mprk::mprk_step;
use super::tableau::ButcherTableau;
use super::SolverError;
use crate::nbseries::DerivativeOracle;
use crate::pds::Pds;
use crate::trees::color;

/// DF(y)·F(y) for the total right-hand side, assembled from the split
/// components' directional derivatives.
pub fn total_derivative(pds: &Pds, y: &[f64]) -> Vec<f64> {
    let split = pds.split();
    let f = split.total(y);
    let mut out = vec![0.0; y.len()];
    for nu in 1..=pds.species() {
        for (o, v) in out.iter_mut().zip(split.deriv(color(nu), y, &[f.clone()])) {
            *o += v;
        }
    }
    out
}

/// Truncated stage expansion used as the numerator of the weighted-sum
/// order conditions: yⁿ_ν + h c_i F_ν(yⁿ), plus ½h² Σ_k a_{ik}c_k (DF·F)_ν
/// at second order.
pub fn stage_series(
    pds: &Pds,
    tab: &ButcherTableau,
    yn: &[f64],
    h: f64,
    i: usize,
    order: u32,
) -> Vec<f64> {
    let f = pds.rhs(yn);
    let ci = tab.c(i);
    let mut out: Vec<f64> = yn
        .iter()
        .zip(&f)
        .map(|(y, fv)| y + h * ci * fv)
        .collect();
    if order >= 2 {
        let curvature: f64 = (0..tab.stages()).map(|k| tab.a(i, k) * tab.c(k)).sum();
        let dff = total_derivative(pds, yn);
        for (o, d) in out.iter_mut().zip(&dff) {
            *o += 0.5 * h * h * curvature * d;
        }
    }
    out
}

/// Rule producing the stage denominators ρ_{iν}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum RhoRule {
    /// ρ_{iν} = yⁿ_ν.
    Prev,
    /// ρ_{iν} = y⁽ᵏ⁾_ν once stage k is available, yⁿ_ν before that.
    Stage { k: usize },
    /// ρ_{iν} from a Patankar–Euler substep of size c_i·h: positive for
    /// every h and equal to yⁿ_ν + h c_i F_ν + O(h²).
    Predictor,
    /// ρ_{iν} = stage_series(i, order)_ν / (1 − skew_i·h). A checker
    /// device: zero skew reproduces the series exactly, a nonzero skew
    /// perturbs the expansion at O(h) while leaving the weighted-sum
    /// condition untouched whenever Σ b_i c_i skew_i = 0.
    Series {
        order: u32,
        #[serde(default)]
        skew: Vec<f64>,
    },
}

impl RhoRule {
    /// Denominators for stage `i` (0-based). Only stages with index < i are
    /// visible, which enforces the independence requirement structurally.
    pub fn values(
        &self,
        pds: &Pds,
        tab: &ButcherTableau,
        yn: &[f64],
        h: f64,
        known_stages: &[Vec<f64>],
        i: usize,
    ) -> Result<Vec<f64>, SolverError> {
        let raw = match self {
            RhoRule::Prev => yn.to_vec(),
            RhoRule::Stage { k } => {
                // 1-based stage number k is available once k ≤ i.
                if *k >= 1 && *k <= known_stages.len() {
                    known_stages[*k - 1].clone()
                } else {
                    yn.to_vec()
                }
            }
            RhoRule::Predictor => patankar_euler(pds, yn, tab.c(i) * h)?,
            RhoRule::Series { order, skew } => {
                let mut v = stage_series(pds, tab, yn, h, i, *order);
                let x = skew.get(i).copied().unwrap_or(0.0);
                let denom = 1.0 - x * h;
                for entry in &mut v {
                    *entry /= denom;
                }
                v
            }
        };
        check_positive(&raw, i)?;
        Ok(raw)
    }
}

/// Rule producing the output denominators σ_ν.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum SigmaRule {
    /// σ_ν = yⁿ_ν.
    Yn,
    /// σ = output of an embedded positive scheme of the given order
    /// (1: Patankar–Euler, 2: two-stage, 3: three-stage), so that
    /// σ = NB_{order}(1/γ, yⁿ) + O(h^{order+1}).
    Predictor { order: u32 },
}

impl SigmaRule {
    pub fn values(
        &self,
        pds: &Pds,
        yn: &[f64],
        h: f64,
        _stages: &[Vec<f64>],
    ) -> Result<Vec<f64>, SolverError> {
        let raw = match self {
            SigmaRule::Yn => yn.to_vec(),
            SigmaRule::Predictor { order } => positive_predictor(pds, yn, h, *order)?,
        };
        check_positive(&raw, usize::MAX)?;
        Ok(raw)
    }
}

/// One Patankar–Euler step: unconditionally positive and first-order.
pub fn patankar_euler(pds: &Pds, yn: &[f64], h: f64) -> Result<Vec<f64>, SolverError> {
    let trace = mprk_step(
        &ButcherTableau::euler(),
        pds,
        &RhoRule::Prev,
        &SigmaRule::Yn,
        yn,
        h,
    )?;
    Ok(trace.output)
}

/// Unconditionally positive approximation of order 1, 2, or 3. Each level
/// embeds the previous one as its σ rule.
pub fn positive_predictor(
    pds: &Pds,
    yn: &[f64],
    h: f64,
    order: u32,
) -> Result<Vec<f64>, SolverError> {
    let (tab, rho, sigma) = match order {
        1 => return patankar_euler(pds, yn, h),
        2 => (
            ButcherTableau::heun(),
            RhoRule::Prev,
            SigmaRule::Predictor { order: 1 },
        ),
        3 => (
            ButcherTableau::ssprk3(),
            RhoRule::Predictor,
            SigmaRule::Predictor { order: 2 },
        ),
        other => return Err(SolverError::UnsupportedOrder { p: other }),
    };
    Ok(mprk_step(&tab, pds, &rho, &sigma, yn, h)?.output)
}

fn check_positive(values: &[f64], stage: usize) -> Result<(), SolverError> {
    for (component, &v) in values.iter().enumerate() {
        if !(v > 0.0) || !v.is_finite() {
            return Err(SolverError::WeightNotPositive { stage, component, value: v });
        }
    }
    Ok(())
}

/// A scalar scaling family φ(h).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum PhiRule {
    One,
    /// 1 / (1 + α hᵏ)
    Rational { alpha: f64, k: u32 },
    /// exp(α hᵏ)
    Exp { alpha: f64, k: u32 },
}

impl PhiRule {
    pub fn value(&self, h: f64) -> f64 {
        match self {
            PhiRule::One => 1.0,
            PhiRule::Rational { alpha, k } => 1.0 / (1.0 + alpha * h.powi(*k as i32)),
            PhiRule::Exp { alpha, k } => (alpha * h.powi(*k as i32)).exp(),
        }
    }
}

/// Stage scalings φ_i and the output scaling φ_{n+1}. φ₁ is fixed to 1:
/// it multiplies an empty sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GecoPhi {
    pub stage: Vec<PhiRule>,
    pub output: PhiRule,
}

impl GecoPhi {
    pub fn ones(stages: usize) -> GecoPhi {
        GecoPhi { stage: vec![PhiRule::One; stages], output: PhiRule::One }
    }

    /// φ_i for 0-based stage index; the first stage is always 1.
    pub fn phi(&self, i: usize, _yn: &[f64], h: f64) -> f64 {
        if i == 0 {
            return 1.0;
        }
        self.stage.get(i).map_or(1.0, |rule| rule.value(h))
    }

    pub fn phi_final(&self, _yn: &[f64], h: f64) -> f64 {
        self.output.value(h)
    }
}
