//! Butcher tableaux for the explicit base methods.

use serde::{Deserialize, Serialize};

use super::SolverError;
use crate::nbseries::{nsark_u, CoefficientProvider};
use crate::trees;

/// Coefficients of an s-stage Runge–Kutta method with c_i = Σ_j a_{ij}.
#[derive(Clone, Debug, PartialEq)]
pub struct ButcherTableau {
    name: String,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    c: Vec<f64>,
}

/// Serialized form: A rows and b weights; c is derived.
#[derive(Serialize, Deserialize)]
pub struct TableauSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl ButcherTableau {
    pub fn new(
        name: impl Into<String>,
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
    ) -> Result<ButcherTableau, SolverError> {
        let s = b.len();
        if s == 0 || a.len() != s || a.iter().any(|row| row.len() != s) {
            return Err(SolverError::BadTableau(
                "A must be s×s and b of length s".into(),
            ));
        }
        let c = a.iter().map(|row| row.iter().sum()).collect();
        Ok(ButcherTableau { name: name.into(), a, b, c })
    }

    pub fn from_spec(spec: TableauSpec) -> Result<ButcherTableau, SolverError> {
        ButcherTableau::new(spec.name.unwrap_or_else(|| "custom".into()), spec.a, spec.b)
    }

    pub fn spec(&self) -> TableauSpec {
        TableauSpec { name: Some(self.name.clone()), a: self.a.clone(), b: self.b.clone() }
    }

    pub fn named(name: &str) -> Result<ButcherTableau, SolverError> {
        match name {
            "euler" => Ok(Self::euler()),
            "heun" => Ok(Self::heun()),
            "midpoint" => Ok(Self::midpoint()),
            "ssprk3" => Ok(Self::ssprk3()),
            "rk4" => Ok(Self::rk4()),
            other => Err(SolverError::BadTableau(format!("unknown tableau `{other}`"))),
        }
    }

    pub fn euler() -> ButcherTableau {
        ButcherTableau::new("euler", vec![vec![0.0]], vec![1.0]).unwrap()
    }

    pub fn heun() -> ButcherTableau {
        ButcherTableau::new(
            "heun",
            vec![vec![0.0, 0.0], vec![1.0, 0.0]],
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    pub fn midpoint() -> ButcherTableau {
        ButcherTableau::new(
            "midpoint",
            vec![vec![0.0, 0.0], vec![0.5, 0.0]],
            vec![0.0, 1.0],
        )
        .unwrap()
    }

    /// Shu–Osher three-stage SSP scheme; all coefficients non-negative.
    pub fn ssprk3() -> ButcherTableau {
        ButcherTableau::new(
            "ssprk3",
            vec![
                vec![0.0, 0.0, 0.0],
                vec![1.0, 0.0, 0.0],
                vec![0.25, 0.25, 0.0],
            ],
            vec![1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
        )
        .unwrap()
    }

    pub fn rk4() -> ButcherTableau {
        ButcherTableau::new(
            "rk4",
            vec![
                vec![0.0, 0.0, 0.0, 0.0],
                vec![0.5, 0.0, 0.0, 0.0],
                vec![0.0, 0.5, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
            ],
            vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
        )
        .unwrap()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.a[i][j]
    }

    pub fn b(&self, j: usize) -> f64 {
        self.b[j]
    }

    pub fn c(&self, i: usize) -> f64 {
        self.c[i]
    }

    pub fn a_rows(&self) -> &[Vec<f64>] {
        &self.a
    }

    pub fn b_weights(&self) -> &[f64] {
        &self.b
    }

    pub fn is_explicit(&self) -> bool {
        self.a
            .iter()
            .enumerate()
            .all(|(i, row)| row.iter().skip(i).all(|&v| v == 0.0))
    }

    pub fn is_nonnegative(&self) -> bool {
        self.a.iter().flatten().all(|&v| v >= 0.0) && self.b.iter().all(|&v| v >= 0.0)
    }

    /// Constant coefficient provider replicating the tableau across colors.
    pub fn provider(&self, colors: u32) -> CoefficientProvider {
        CoefficientProvider::constant(&self.a, &self.b, colors)
    }

    /// Certifies the classical order by checking u(τ) = 1/γ(τ) on
    /// mono-colored trees of increasing order; returns the largest p ≤ max
    /// for which every tree up to order p passes.
    pub fn classical_order(&self, max: u32) -> Result<u32, SolverError> {
        let provider = self.provider(1);
        let set = trees::enumerate(max, 1)?;
        let mut certified = 0;
        for q in 1..=max {
            for tree in set.of_order(q) {
                let u = nsark_u(tree, &provider);
                if (u - 1.0 / tree.density() as f64).abs() > 1e-12 {
                    return Ok(certified);
                }
            }
            certified = q;
        }
        Ok(certified)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_tableaux_certify_expected_orders() {
        for (tab, order) in [
            (ButcherTableau::euler(), 1),
            (ButcherTableau::heun(), 2),
            (ButcherTableau::midpoint(), 2),
            (ButcherTableau::ssprk3(), 3),
            (ButcherTableau::rk4(), 4),
        ] {
            assert_eq!(tab.classical_order(5).unwrap(), order, "{}", tab.name());
            assert!(tab.is_explicit());
            assert!(tab.is_nonnegative());
        }
    }

    #[test]
    fn c_is_row_sum_of_a() {
        let tab = ButcherTableau::rk4();
        assert_eq!(
            (0..4).map(|i| tab.c(i)).collect::<Vec<_>>(),
            vec![0.0, 0.5, 0.5, 1.0]
        );
        assert_eq!(ButcherTableau::ssprk3().c(2), 0.5);
    }

    #[test]
    fn malformed_dimensions_are_rejected() {
        assert!(matches!(
            ButcherTableau::new("bad", vec![vec![0.0, 0.0]], vec![1.0]),
            Err(SolverError::BadTableau(_))
        ));
        assert!(matches!(
            ButcherTableau::new("bad", vec![vec![0.0]], vec![0.5, 0.5]),
            Err(SolverError::BadTableau(_))
        ));
        assert!(ButcherTableau::named("rk9").is_err());
    }

    #[test]
    fn implicit_entries_are_detected() {
        let tab =
            ButcherTableau::new("trapezoid", vec![vec![0.0, 0.0], vec![0.5, 0.5]], vec![0.5, 0.5])
                .unwrap();
        assert!(!tab.is_explicit());
    }

    #[test]
    fn spec_round_trip() {
        let tab = ButcherTableau::ssprk3();
        let again = ButcherTableau::from_spec(tab.spec()).unwrap();
        assert_eq!(tab, again);
    }
}
