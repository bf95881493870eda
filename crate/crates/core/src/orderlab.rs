//! Numerical verification of order conditions.
//!
//! Everything here reduces to one move: evaluate a condition residual on a
//! geometric h-grid, fit a slope in log-log space, and compare against the
//! target exponent. Residuals below [`NOISE_FLOOR`] are unfalsifiable at
//! f64 rounding and count as exactly satisfied.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::nbseries::{
    inverse_density_weights, nb_truncation, CoefficientProvider, NbError, UCoefficients,
};
use crate::par;
use crate::pds::{Pds, PdsError};
use crate::solvers::weights::stage_series;
use crate::solvers::{integrate, ButcherTableau, GecoPhi, Method, Scheme, SolverError};
use crate::trees::{enumerate, ColoredTree, NTreeSet, TreeError};

/// Residuals at or below this magnitude are treated as exactly satisfied.
pub const NOISE_FLOOR: f64 = 1e-13;
/// A fitted slope may fall short of its target by this much and still pass.
pub const SLOPE_SLACK: f64 = 0.1;

#[derive(Debug, Error)]
pub enum OrderlabError {
    #[error("grid for `{id}` too coarse: {usable} usable points above the noise floor")]
    GridTooCoarse { id: String, usable: usize },
    #[error("grid must satisfy h0 > 0, 0 < ratio < 1, points >= 4")]
    BadGrid,
    #[error("unsupported order {p}")]
    UnsupportedOrder { p: u32 },
    #[error("conditions at order {p} cover {p}-stage tableaus, got {stages} stages")]
    StageCountMismatch { stages: usize, p: u32 },
    #[error("tableau `{name}` is not of classical order {p}")]
    TableauOrder { name: String, p: u32 },
    #[error("scheme `{scheme}` does not use the {expected} stepper")]
    SchemeKind { scheme: String, expected: &'static str },
    #[error("gamma sampling needs b_2 c_2 != 0 in the tableau")]
    UnsuitableTableau,
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Pds(#[from] PdsError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Nb(#[from] NbError),
}

/// Geometric grid h0, h0·r, h0·r², ...; strictly decreasing.
pub fn geometric_grid(h0: f64, ratio: f64, points: usize) -> Result<Vec<f64>, OrderlabError> {
    if !(h0 > 0.0) || !(ratio > 0.0 && ratio < 1.0) || points < 4 {
        return Err(OrderlabError::BadGrid);
    }
    Ok((0..points).map(|k| h0 * ratio.powi(k as i32)).collect())
}

/// The default verification grid: 0.1 halved seven times.
pub fn default_grid() -> Vec<f64> {
    geometric_grid(0.1, 0.5, 8).expect("default grid is valid")
}

/// The builtin initial state plus three random positive multiplicative
/// perturbations of it, to avoid judging a condition at a special point.
pub fn probe_states(pds: &Pds, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y0 = pds.initial_state().to_vec();
    let mut states = vec![y0.clone()];
    for _ in 0..3 {
        states.push(y0.iter().map(|v| v * rng.gen_range(0.5..2.0)).collect());
    }
    states
}

/// One condition's residual magnitudes over the grid with its slope fit.
#[derive(Clone, Debug, Serialize)]
pub struct ResidualSeries {
    pub id: String,
    /// Exponent the residual should decay with.
    pub target: f64,
    /// Slope threshold after the slack policy.
    pub required: f64,
    pub grid: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Fitted log-log slope; absent when the residual sits in the floor.
    pub slope: Option<f64>,
    /// Every point at or below the noise floor.
    pub exact: bool,
    pub pass: bool,
}

fn required_slope(target: f64) -> f64 {
    // A target exponent of zero still demands decay: one factor of h.
    if target == 0.0 {
        0.9
    } else {
        target - SLOPE_SLACK
    }
}

fn log_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|(h, _)| h.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, r)| r.ln()).collect();
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let rms = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let d = y - ym - slope * (x - xm);
            d * d
        })
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, rms)
}

/// Fits one series under the floor/tail policy: drop points in the noise
/// floor, fit the smallest four to six usable h, pass on slope or on
/// having converged into the floor.
pub fn fit_series(
    id: String,
    target: f64,
    grid: &[f64],
    residuals: Vec<f64>,
) -> Result<ResidualSeries, OrderlabError> {
    let required = required_slope(target);
    let usable: Vec<(f64, f64)> = grid
        .iter()
        .zip(&residuals)
        .filter(|(_, &r)| r > NOISE_FLOOR)
        .map(|(&h, &r)| (h, r))
        .collect();
    let exact = usable.is_empty();
    let (slope, pass) = if exact {
        (None, true)
    } else if usable.len() < 4 {
        if *residuals.last().unwrap() <= NOISE_FLOOR {
            // The residual fell into the floor before four points showed:
            // decay is at least as fast as claimed.
            (Some(log_fit(&usable).0).filter(|_| usable.len() >= 2), true)
        } else {
            return Err(OrderlabError::GridTooCoarse { id, usable: usable.len() });
        }
    } else {
        let tail = usable.len().min(6);
        let (slope, _) = log_fit(&usable[usable.len() - tail..]);
        (Some(slope), slope >= required)
    };
    Ok(ResidualSeries { id, target, required, grid: grid.to_vec(), residuals, slope, exact, pass })
}

/// A named bundle of residual series with an overall verdict.
#[derive(Clone, Debug, Serialize)]
pub struct ConditionReport {
    pub scheme: String,
    pub order: u32,
    pub series: Vec<ResidualSeries>,
    pub pass: bool,
}

impl ConditionReport {
    fn assemble(scheme: String, order: u32, series: Vec<ResidualSeries>) -> ConditionReport {
        let pass = series.iter().all(|s| s.pass);
        ConditionReport { scheme, order, series, pass }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table, one row per condition.
    pub fn text_table(&self) -> String {
        let mut out = String::new();
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{} (order {}): {}", self.scheme, self.order, verdict);
        let width = self
            .series
            .iter()
            .map(|s| s.id.chars().count())
            .chain(["condition".len()])
            .max()
            .unwrap_or(9);
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>8}  {:>8}  status",
            "condition", "target", "slope", "required"
        );
        for s in &self.series {
            let slope = match (s.exact, s.slope) {
                (true, _) => "exact".to_string(),
                (false, Some(v)) => format!("{v:.3}"),
                (false, None) => "floor".to_string(),
            };
            let _ = writeln!(
                out,
                "{:<width$}  {:>6.1}  {:>8}  {:>8.2}  {}",
                s.id,
                s.target,
                slope,
                s.required,
                if s.pass { "pass" } else { "FAIL" }
            );
        }
        out
    }
}

/// Checks u(τ) = 1/γ(τ) + O(h^{p+1-|τ|}) for every tree of order ≤ p,
/// with residuals enveloped over the probe states.
pub fn u_residuals<F>(
    scheme_id: &str,
    step_source: F,
    set: &NTreeSet,
    p: u32,
    grid: &[f64],
    states: &[Vec<f64>],
) -> Result<ConditionReport, OrderlabError>
where
    F: Fn(&[f64], f64) -> Result<CoefficientProvider, SolverError> + Sync,
{
    let mut trees: Vec<&ColoredTree> = set.iter().filter(|t| t.order() <= p).collect();
    trees.sort_by(|a, b| a.encoding().cmp(b.encoding()));

    let per_h: Vec<Result<Vec<f64>, OrderlabError>> = par::par_map(grid, |&h| {
        let mut worst = vec![0.0f64; trees.len()];
        for yn in states {
            let provider = step_source(yn, h)?;
            let u = UCoefficients::compute(set, &provider);
            for (k, tree) in trees.iter().enumerate() {
                let value = u.u(tree).expect("tree comes from the computed set");
                let residual = (value - 1.0 / tree.density() as f64).abs();
                worst[k] = worst[k].max(residual);
            }
        }
        Ok(worst)
    });
    let mut columns = Vec::with_capacity(grid.len());
    for r in per_h {
        columns.push(r?);
    }

    let mut series = Vec::with_capacity(trees.len());
    for (k, tree) in trees.iter().enumerate() {
        let residuals: Vec<f64> = columns.iter().map(|c| c[k]).collect();
        let target = (p + 1 - tree.order()) as f64;
        series.push(fit_series(tree.to_string(), target, grid, residuals)?);
    }
    Ok(ConditionReport::assemble(scheme_id.to_string(), p, series))
}

/// [`u_residuals`] for a gallery-style scheme on a builtin problem, using
/// the realized coefficients of actual steps from the probe states.
pub fn scheme_u_report(
    scheme: &Scheme,
    pds: &Pds,
    p: u32,
    grid: &[f64],
    seed: u64,
) -> Result<ConditionReport, OrderlabError> {
    let set = enumerate(p, scheme.colors(pds))?;
    let states = probe_states(pds, seed);
    u_residuals(
        &scheme.name,
        |yn, h| scheme.step(pds, yn, h).map(|t| t.realized),
        &set,
        p,
        grid,
        &states,
    )
}

/// Global-error slope of a scheme against the problem's reference solution.
#[derive(Clone, Debug, Serialize)]
pub struct OrderFit {
    pub scheme: String,
    pub problem: String,
    pub order: f64,
    /// RMS deviation of the log residuals from the fitted line.
    pub fit_residual: f64,
    pub grid: Vec<f64>,
    pub errors: Vec<f64>,
}

pub fn empirical_order(
    scheme: &Scheme,
    pds: &Pds,
    t_end: f64,
    grid: &[f64],
) -> Result<OrderFit, OrderlabError> {
    let y0 = pds.initial_state().to_vec();
    let reference = pds.reference_solution(&y0, t_end)?;
    let per_h: Vec<Result<f64, OrderlabError>> = par::par_map(grid, |&h| {
        let traj = integrate(scheme, pds, &y0, t_end, h)?;
        let last = traj.states.last().unwrap();
        Ok(last
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    });
    let mut errors = Vec::with_capacity(grid.len());
    for r in per_h {
        errors.push(r?);
    }
    let usable: Vec<(f64, f64)> = grid
        .iter()
        .zip(&errors)
        .filter(|(_, &e)| e > NOISE_FLOOR)
        .map(|(&h, &e)| (h, e))
        .collect();
    if usable.len() < 4 {
        return Err(OrderlabError::GridTooCoarse {
            id: "global error".into(),
            usable: usable.len(),
        });
    }
    let tail = usable.len().min(6);
    let (order, fit_residual) = log_fit(&usable[usable.len() - tail..]);
    Ok(OrderFit {
        scheme: scheme.name.clone(),
        problem: pds.name().to_string(),
        order,
        fit_residual,
        grid: grid.to_vec(),
        errors,
    })
}

/// Residuals of the explicit GeCo conditions at order p = s: the output
/// factor (target p), the weighted stage sum (target p-1), and each stage
/// factor (target p-2).
pub fn geco_conditions(
    phi: &GecoPhi,
    tab: &ButcherTableau,
    p: u32,
    yn: &[f64],
    grid: &[f64],
) -> Result<ConditionReport, OrderlabError> {
    if !(1..=4).contains(&p) {
        return Err(OrderlabError::UnsupportedOrder { p });
    }
    let s = tab.stages();
    if s != p as usize {
        return Err(OrderlabError::StageCountMismatch { stages: s, p });
    }
    if tab.classical_order(p)? < p {
        return Err(OrderlabError::TableauOrder { name: tab.name().to_string(), p });
    }

    let mut series = Vec::new();
    let eval = |f: &dyn Fn(f64) -> f64| -> Vec<f64> { grid.iter().map(|&h| f(h)).collect() };

    series.push(fit_series(
        "phi_out".into(),
        p as f64,
        grid,
        eval(&|h| (phi.phi_final(yn, h) - 1.0).abs()),
    )?);
    if p >= 2 {
        series.push(fit_series(
            "sum b_i c_i phi_i".into(),
            (p - 1) as f64,
            grid,
            eval(&|h| {
                let sum: f64 = (0..s).map(|i| tab.b(i) * tab.c(i) * phi.phi(i, yn, h)).sum();
                (sum - 0.5).abs()
            }),
        )?);
        for i in 1..s {
            series.push(fit_series(
                format!("phi stage {}", i + 1),
                p as f64 - 2.0,
                grid,
                eval(&|h| (phi.phi(i, yn, h) - 1.0).abs()),
            )?);
        }
    }
    Ok(ConditionReport::assemble(format!("geco/{}", tab.name()), p, series))
}

/// Residuals of the Patankar weight conditions at order p: σ against the
/// NB truncation of the exact flow, the weighted stage sums, and the
/// stage denominator expansions, enveloped over the probe states.
pub fn mprk_conditions(
    scheme: &Scheme,
    pds: &Pds,
    p: u32,
    states: &[Vec<f64>],
    grid: &[f64],
) -> Result<ConditionReport, OrderlabError> {
    if !matches!(scheme.method, Method::Mprk { .. }) {
        return Err(OrderlabError::SchemeKind {
            scheme: scheme.name.clone(),
            expected: "Patankar",
        });
    }
    if !(1..=4).contains(&p) {
        return Err(OrderlabError::UnsupportedOrder { p });
    }
    let tab = &scheme.tableau;
    let s = tab.stages();
    let split = pds.split();
    let weights = if p >= 2 { Some(inverse_density_weights(&enumerate(p - 1, pds.species())?)) } else { None };

    // Families: index 0 is sigma, then one per stage i = 2..=s, then the
    // weighted sum for p >= 3.
    let rho_target = if p == 4 { 2.0 } else { 1.0 };
    let families = 1 + if p >= 2 { s - 1 } else { 0 } + usize::from(p >= 3);

    let per_h: Vec<Result<Vec<f64>, OrderlabError>> = par::par_map(grid, |&h| {
        let mut worst = vec![0.0f64; families];
        for yn in states {
            let trace = scheme.step(pds, yn, h)?;
            let sigma = trace.sigma.as_ref().expect("Patankar trace has sigma");
            let rho = trace.rho.as_ref().expect("Patankar trace has rho");

            let nb = match &weights {
                Some(u) => nb_truncation(u, &split, yn, h, p - 1)?,
                None => yn.to_vec(),
            };
            for (sv, nv) in sigma.iter().zip(&nb) {
                worst[0] = worst[0].max((sv - nv).abs());
            }

            if p >= 2 {
                for i in 1..s {
                    let reference = if p == 4 {
                        stage_series(pds, tab, yn, h, i, 1)
                    } else {
                        yn.to_vec()
                    };
                    for (rv, fv) in rho[i].iter().zip(&reference) {
                        worst[i] = worst[i].max((rv - fv).abs());
                    }
                }
            }
            if p >= 3 {
                let k = families - 1;
                for nu in 0..yn.len() {
                    let mut sum = 0.0;
                    for i in 1..s {
                        let num = stage_series(pds, tab, yn, h, i, p - 2);
                        sum += tab.b(i) * tab.c(i) * num[nu] / rho[i][nu];
                    }
                    worst[k] = worst[k].max((sum - 0.5).abs());
                }
            }
        }
        Ok(worst)
    });
    let mut columns = Vec::with_capacity(grid.len());
    for r in per_h {
        columns.push(r?);
    }

    let column = |k: usize| -> Vec<f64> { columns.iter().map(|c| c[k]).collect() };
    let mut series = Vec::new();
    series.push(fit_series(
        format!("sigma vs NB_{}", p - 1),
        p as f64,
        grid,
        column(0),
    )?);
    if p >= 2 {
        for i in 1..s {
            series.push(fit_series(
                format!("rho stage {}", i + 1),
                rho_target,
                grid,
                column(i),
            )?);
        }
    }
    if p >= 3 {
        series.push(fit_series(
            "weighted stage sum".into(),
            (p - 1) as f64,
            grid,
            column(families - 1),
        )?);
    }
    Ok(ConditionReport::assemble(scheme.name.clone(), p, series))
}

/// A polynomial family γ(h) = 1 + x·h + z·h² per component, for the output
/// weight and for each stage weight 2..=s.
#[derive(Clone, Debug, Serialize)]
pub struct GammaFamily {
    /// (x, z) for γ^{n+1}, one pair per component.
    pub out: Vec<(f64, f64)>,
    /// (x, z) for γ^{(i)}, i = 2..=s: `stage[i - 2][component]`.
    pub stage: Vec<Vec<(f64, f64)>>,
}

impl GammaFamily {
    pub fn components(&self) -> usize {
        self.out.len()
    }

    pub fn out_value(&self, mu: usize, h: f64) -> f64 {
        let (x, z) = self.out[mu];
        1.0 + x * h + z * h * h
    }

    /// γ^{(i)} for 1-based stage i ≥ 2.
    pub fn stage_value(&self, i: usize, nu: usize, h: f64) -> f64 {
        let (x, z) = self.stage[i - 2][nu];
        1.0 + x * h + z * h * h
    }
}

/// Evaluates the full weighted order-condition set for a polynomial
/// γ-family against a classical tableau of order p = s, p ∈ {3, 4}.
pub fn gamma_family_report(
    tab: &ButcherTableau,
    p: u32,
    family: &GammaFamily,
    grid: &[f64],
) -> Result<ConditionReport, OrderlabError> {
    if !(3..=4).contains(&p) {
        return Err(OrderlabError::UnsupportedOrder { p });
    }
    let s = tab.stages();
    if s != p as usize {
        return Err(OrderlabError::StageCountMismatch { stages: s, p });
    }
    if tab.classical_order(p)? < p {
        return Err(OrderlabError::TableauOrder { name: tab.name().to_string(), p });
    }
    let n = family.components();
    let b = |i: usize| tab.b(i - 1);
    let c = |i: usize| tab.c(i - 1);
    let a = |i: usize, j: usize| tab.a(i - 1, j - 1);
    let g = |i: usize, nu: usize, h: f64| family.stage_value(i, nu, h);

    let mut series = Vec::new();
    let mut push = |id: &str,
                    target: f64,
                    f: &dyn Fn(f64) -> f64|
     -> Result<(), OrderlabError> {
        let residuals: Vec<f64> = grid.iter().map(|&h| f(h)).collect();
        series.push(fit_series(id.to_string(), target, grid, residuals)?);
        Ok(())
    };

    push("gamma_out", p as f64, &|h| {
        (0..n).map(|mu| (family.out_value(mu, h) - 1.0).abs()).fold(0.0, f64::max)
    })?;
    push("sum b_i c_i g_i", (p - 1) as f64, &|h| {
        (0..n)
            .map(|nu| {
                let sum: f64 = (2..=s).map(|i| b(i) * c(i) * g(i, nu, h)).sum();
                (sum - 0.5).abs()
            })
            .fold(0.0, f64::max)
    })?;
    push("sum b_i c_i^2 g_i g_i", (p - 2) as f64, &|h| {
        let mut worst = 0.0f64;
        for nu in 0..n {
            for xi in 0..n {
                let sum: f64 =
                    (2..=s).map(|i| b(i) * c(i) * c(i) * g(i, nu, h) * g(i, xi, h)).sum();
                worst = worst.max((sum - 1.0 / 3.0).abs());
            }
        }
        worst
    })?;
    push("sum b_i a_ij c_j g_i g_j", (p - 2) as f64, &|h| {
        let mut worst = 0.0f64;
        for nu in 0..n {
            for xi in 0..n {
                let mut sum = 0.0;
                for i in 2..=s {
                    for j in 2..=s {
                        sum += b(i) * a(i, j) * c(j) * g(i, nu, h) * g(j, xi, h);
                    }
                }
                worst = worst.max((sum - 1.0 / 6.0).abs());
            }
        }
        worst
    })?;
    if p == 4 {
        push("sum b_i c_i a_ij c_j g_i g_i g_j", 1.0, &|h| {
            let mut worst = 0.0f64;
            for nu in 0..n {
                for xi in 0..n {
                    for eta in 0..n {
                        let mut sum = 0.0;
                        for i in 2..=s {
                            for j in 2..=s {
                                sum += b(i) * c(i) * a(i, j) * c(j)
                                    * g(i, nu, h)
                                    * g(i, xi, h)
                                    * g(j, eta, h);
                            }
                        }
                        worst = worst.max((sum - 1.0 / 8.0).abs());
                    }
                }
            }
            worst
        })?;
        push("sum b_i c_i^3 g_i g_i g_i", 1.0, &|h| {
            let mut worst = 0.0f64;
            for nu in 0..n {
                for xi in 0..n {
                    for eta in 0..n {
                        let sum: f64 = (2..=s)
                            .map(|i| {
                                b(i) * c(i).powi(3) * g(i, nu, h) * g(i, xi, h) * g(i, eta, h)
                            })
                            .sum();
                        worst = worst.max((sum - 0.25).abs());
                    }
                }
            }
            worst
        })?;
        push("sum b_i a_ij a_jk c_k g_i g_j g_k", 1.0, &|h| {
            let mut worst = 0.0f64;
            for nu in 0..n {
                for xi in 0..n {
                    for eta in 0..n {
                        let mut sum = 0.0;
                        for i in 2..=s {
                            for j in 2..=s {
                                for k in 2..=s {
                                    sum += b(i) * a(i, j) * a(j, k) * c(k)
                                        * g(i, nu, h)
                                        * g(j, xi, h)
                                        * g(k, eta, h);
                                }
                            }
                        }
                        worst = worst.max((sum - 1.0 / 24.0).abs());
                    }
                }
            }
            worst
        })?;
        push("sum b_i a_ij c_j^2 g_i g_j g_j", 1.0, &|h| {
            let mut worst = 0.0f64;
            for nu in 0..n {
                for xi in 0..n {
                    for eta in 0..n {
                        let mut sum = 0.0;
                        for i in 2..=s {
                            for j in 2..=s {
                                sum += b(i) * a(i, j) * c(j) * c(j)
                                    * g(i, nu, h)
                                    * g(j, xi, h)
                                    * g(j, eta, h);
                            }
                        }
                        worst = worst.max((sum - 1.0 / 12.0).abs());
                    }
                }
            }
            worst
        })?;
    }
    Ok(ConditionReport::assemble(format!("gamma/{}", tab.name()), p, series))
}

/// How a sampled γ-family relates to the reduced condition set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FamilyKind {
    Compliant,
    Violating,
}

/// Samples a polynomial γ-family that either satisfies the reduced
/// condition set by construction or violates exactly one of its members.
pub fn sample_gamma_family(
    tab: &ButcherTableau,
    p: u32,
    components: usize,
    kind: FamilyKind,
    rng: &mut impl Rng,
) -> Result<GammaFamily, OrderlabError> {
    if !(3..=4).contains(&p) {
        return Err(OrderlabError::UnsupportedOrder { p });
    }
    let s = tab.stages();
    if s != p as usize {
        return Err(OrderlabError::StageCountMismatch { stages: s, p });
    }
    let bc = |i: usize| tab.b(i - 1) * tab.c(i - 1);
    if bc(2).abs() < 1e-14 {
        return Err(OrderlabError::UnsuitableTableau);
    }

    let mut out = vec![(0.0, 0.0); components];
    let mut stage = vec![vec![(0.0, 0.0); components]; s - 1];
    for nu in 0..components {
        if p == 3 {
            // x free except Σ b_i c_i x_i = 0; z unconstrained.
            let x3 = rng.gen_range(-1.0..1.0);
            let x2 = -bc(3) * x3 / bc(2);
            stage[0][nu] = (x2, rng.gen_range(-1.0..1.0));
            stage[1][nu] = (x3, rng.gen_range(-1.0..1.0));
        } else {
            // x = 0 throughout; z free except Σ b_i c_i z_i = 0.
            let z3 = rng.gen_range(-1.0..1.0);
            let z4 = rng.gen_range(-1.0..1.0);
            let z2 = -(bc(3) * z3 + bc(4) * z4) / bc(2);
            stage[0][nu] = (0.0, z2);
            stage[1][nu] = (0.0, z3);
            stage[2][nu] = (0.0, z4);
        }
    }

    if kind == FamilyKind::Violating {
        let magnitude = |rng: &mut dyn rand::RngCore| {
            let mut r = ChaCha8Rng::seed_from_u64(rng.next_u64());
            let t: f64 = r.gen_range(0.5..1.5);
            if r.gen_bool(0.5) {
                t
            } else {
                -t
            }
        };
        let modes = if p == 3 { 2 } else { 3 };
        match rng.gen_range(0..modes) {
            0 => {
                // Break γ^{n+1} = 1 + O(h^p).
                for o in out.iter_mut() {
                    o.0 = magnitude(rng);
                }
            }
            1 => {
                // Break Σ b_i c_i γ^{(i)} = 1/2 + O(h^{p-1}).
                for row in stage[0].iter_mut() {
                    row.0 += magnitude(rng);
                }
            }
            _ => {
                // p = 4 only: keep the weighted sum exact but break
                // γ^{(i)} = 1 + O(h²) with a skewed O(h) term.
                for nu in 0..components {
                    let x3 = magnitude(rng);
                    let x4 = magnitude(rng);
                    let x2 = -(bc(3) * x3 + bc(4) * x4) / bc(2);
                    stage[0][nu].0 = x2;
                    stage[1][nu].0 = x3;
                    stage[2][nu].0 = x4;
                }
            }
        }
    }
    Ok(GammaFamily { out, stage })
}

/// Outcome counts of the randomized reduced-versus-full equivalence check.
#[derive(Clone, Debug, Serialize)]
pub struct SpotCheck {
    pub p: u32,
    pub trials: usize,
    /// Families built to satisfy the reduced set that passed the full set.
    pub compliant_passes: usize,
    /// Families built to violate the reduced set that failed at least one
    /// full condition.
    pub violations_detected: usize,
    /// Human-readable notes for any trial that misbehaved; empty on success.
    pub anomalies: Vec<String>,
}

impl SpotCheck {
    pub fn clean(&self) -> bool {
        self.compliant_passes == self.trials && self.violations_detected == self.trials
    }
}

/// Samples `trials` reduced-compliant and `trials` reduced-violating
/// γ-families and verifies the full condition set agrees with the reduced
/// one in both directions, trial by trial.
pub fn reduced_set_spotcheck(
    tab: &ButcherTableau,
    p: u32,
    trials: usize,
    seed: u64,
    grid: &[f64],
) -> Result<SpotCheck, OrderlabError> {
    let indices: Vec<u64> = (0..trials as u64).collect();
    let run = |kind: FamilyKind, salt: u64| -> Result<(usize, Vec<String>), OrderlabError> {
        let outcomes: Vec<Result<(bool, Vec<String>), OrderlabError>> =
            par::par_map(&indices, |&t| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt ^ (t.wrapping_mul(0x9e3779b97f4a7c15)));
                let family = sample_gamma_family(tab, p, 2, kind, &mut rng)?;
                let report = gamma_family_report(tab, p, &family, grid)?;
                let expected = kind == FamilyKind::Compliant;
                if report.pass == expected {
                    Ok((true, Vec::new()))
                } else {
                    let failing: Vec<String> = report
                        .series
                        .iter()
                        .filter(|s| !s.pass)
                        .map(|s| s.id.clone())
                        .collect();
                    Ok((false, vec![format!(
                        "{kind:?} trial {t}: pass={} (failing: {})",
                        report.pass,
                        failing.join(", ")
                    )]))
                }
            });
        let mut good = 0;
        let mut notes = Vec::new();
        for o in outcomes {
            let (ok, mut n) = o?;
            if ok {
                good += 1;
            }
            notes.append(&mut n);
        }
        Ok((good, notes))
    };

    let (compliant_passes, mut anomalies) = run(FamilyKind::Compliant, 0)?;
    let (violations_detected, mut more) = run(FamilyKind::Violating, 0x5bf0_3635)?;
    anomalies.append(&mut more);
    Ok(SpotCheck { p, trials, compliant_passes, violations_detected, anomalies })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::{gallery, PhiRule};
    use crate::trees::color;

    fn linear2_states() -> Vec<Vec<f64>> {
        probe_states(&Pds::linear2(), 7)
    }

    #[test]
    fn grid_validation() {
        assert!(geometric_grid(0.1, 0.5, 8).is_ok());
        assert!(geometric_grid(0.0, 0.5, 8).is_err());
        assert!(geometric_grid(0.1, 1.0, 8).is_err());
        assert!(geometric_grid(0.1, 0.5, 3).is_err());
        let g = default_grid();
        assert!(g.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn constant_tableau_u_residuals_are_exactly_zero() {
        let tab = ButcherTableau::rk4();
        let set = enumerate(4, 2).unwrap();
        let states = linear2_states();
        let report = u_residuals(
            "rk4",
            |_, _| Ok(tab.provider(2)),
            &set,
            4,
            &default_grid(),
            &states,
        )
        .unwrap();
        assert!(report.pass);
        assert!(report.series.iter().all(|s| s.exact));
    }

    /// Realized-coefficient residuals carry visible pre-asymptotic
    /// curvature at h ~ 1e-3, so slope checks against tight targets use a
    /// grid four halvings deeper than the default.
    fn deep_grid() -> Vec<f64> {
        geometric_grid(0.1, 0.5, 12).unwrap()
    }

    #[test]
    fn second_order_patankar_u_slopes() {
        let pds = Pds::linear2();
        let scheme = Scheme::named("mprk22").unwrap();
        let report = scheme_u_report(&scheme, &pds, 2, &deep_grid(), 7).unwrap();
        assert!(report.pass, "{}", report.text_table());
        for s in &report.series {
            let leaf = !s.id.starts_with('[');
            let slope = s.slope.expect("patankar residuals are h-dependent");
            if leaf {
                assert!(slope >= 1.9, "{}: {slope}", s.id);
            } else {
                assert!(slope >= 0.9, "{}: {slope}", s.id);
            }
        }
    }

    #[test]
    fn first_order_sigma_fails_second_order_trees() {
        let pds = Pds::linear2();
        let scheme = Scheme::named("mprk11").unwrap();
        let report = scheme_u_report(&scheme, &pds, 2, &default_grid(), 7).unwrap();
        assert!(!report.pass);
        let broken = report
            .series
            .iter()
            .find(|s| s.id.starts_with('[') && !s.pass)
            .expect("an order-2 tree must fail");
        assert!(broken.slope.unwrap() < 0.5, "{}", broken.slope.unwrap());
    }

    #[test]
    fn empirical_orders_of_classical_schemes() {
        let pds = Pds::linear2();
        let grid = default_grid();
        let rk4 = empirical_order(&Scheme::named("rk4").unwrap(), &pds, 1.0, &grid).unwrap();
        assert!((rk4.order - 4.0).abs() < 0.1, "{}", rk4.order);
        let euler = empirical_order(&Scheme::named("euler").unwrap(), &pds, 1.0, &grid).unwrap();
        assert!((euler.order - 1.0).abs() < 0.1, "{}", euler.order);
        assert!(euler.fit_residual < 0.05);
    }

    #[test]
    fn geco_conditions_identity_phi_is_exact() {
        let tab = ButcherTableau::ssprk3();
        let phi = GecoPhi::ones(3);
        let report = geco_conditions(&phi, &tab, 3, &[1.0, 1.0], &default_grid()).unwrap();
        assert!(report.pass);
        assert!(report.series.iter().all(|s| s.exact));
    }

    #[test]
    fn geco_second_order_rational_stage_factor() {
        let tab = ButcherTableau::heun();
        let phi = GecoPhi {
            stage: vec![PhiRule::One, PhiRule::Rational { alpha: 1.0, k: 1 }],
            output: PhiRule::Rational { alpha: 1.0, k: 2 },
        };
        let report = geco_conditions(&phi, &tab, 2, &[1.0], &default_grid()).unwrap();
        assert!(report.pass, "{}", report.text_table());
        let stage = report.series.iter().find(|s| s.id == "phi stage 2").unwrap();
        assert!((stage.slope.unwrap() - 1.0).abs() < 0.05);
    }

    #[test]
    fn geco_fourth_order_rejects_first_order_stage_factors() {
        let tab = ButcherTableau::rk4();
        let slow = PhiRule::Rational { alpha: 1.0, k: 1 };
        let phi = GecoPhi {
            stage: vec![PhiRule::One, slow.clone(), slow.clone(), slow],
            output: PhiRule::One,
        };
        let report = geco_conditions(&phi, &tab, 4, &[1.0], &default_grid()).unwrap();
        assert!(!report.pass);
        let stage = report.series.iter().find(|s| s.id == "phi stage 2").unwrap();
        assert!(!stage.pass);
        assert!((stage.slope.unwrap() - 1.0).abs() < 0.05, "slope 1 < target 2");
    }

    #[test]
    fn geco_checker_rejects_mismatched_stage_count() {
        let tab = ButcherTableau::rk4();
        let phi = GecoPhi::ones(4);
        assert!(matches!(
            geco_conditions(&phi, &tab, 3, &[1.0], &default_grid()),
            Err(OrderlabError::StageCountMismatch { .. })
        ));
    }

    #[test]
    fn mprk_conditions_first_order_sigma_is_exact() {
        let pds = Pds::linear2();
        let scheme = Scheme::named("mprk11").unwrap();
        let report =
            mprk_conditions(&scheme, &pds, 1, &linear2_states(), &default_grid()).unwrap();
        assert!(report.pass);
        assert!(report.series[0].exact, "sigma = yn identically");
    }

    #[test]
    fn mprk_conditions_second_order_sigma_slope() {
        let pds = Pds::linear2();
        let scheme = Scheme::named("mprk22").unwrap();
        let report =
            mprk_conditions(&scheme, &pds, 2, &linear2_states(), &default_grid()).unwrap();
        assert!(report.pass, "{}", report.text_table());
        let sigma = &report.series[0];
        assert_eq!(sigma.id, "sigma vs NB_1");
        assert!(sigma.slope.unwrap() >= 1.9);
    }

    #[test]
    fn mprk_conditions_third_order_gallery_scheme_passes() {
        let pds = Pds::linear2();
        let scheme = Scheme::named("mprk33").unwrap();
        let report = mprk_conditions(&scheme, &pds, 3, &linear2_states(), &deep_grid()).unwrap();
        assert!(report.pass, "{}", report.text_table());
    }

    #[test]
    fn mprk_conditions_flag_slow_rho_at_fourth_order() {
        let pds = Pds::linear2();
        let scheme = Scheme {
            name: "mprk44-slow-rho".into(),
            order: 4,
            tableau: ButcherTableau::rk4(),
            method: Method::Mprk {
                rho: crate::solvers::RhoRule::Prev,
                sigma: crate::solvers::SigmaRule::Predictor { order: 3 },
            },
        };
        let report =
            mprk_conditions(&scheme, &pds, 4, &linear2_states(), &default_grid()).unwrap();
        assert!(!report.pass);
        for s in &report.series {
            if s.id.starts_with("rho stage") {
                assert!(!s.pass, "{} should fail", s.id);
                assert!((s.slope.unwrap() - 1.0).abs() < 0.1, "slope 1 < target 2");
            }
        }
    }

    #[test]
    fn mprk_checker_rejects_non_patankar_schemes() {
        let pds = Pds::linear2();
        let scheme = Scheme::named("rk4").unwrap();
        assert!(matches!(
            mprk_conditions(&scheme, &pds, 2, &linear2_states(), &default_grid()),
            Err(OrderlabError::SchemeKind { .. })
        ));
    }

    #[test]
    fn unit_gamma_family_is_exact() {
        let family = GammaFamily {
            out: vec![(0.0, 0.0); 2],
            stage: vec![vec![(0.0, 0.0); 2]; 2],
        };
        let report =
            gamma_family_report(&ButcherTableau::ssprk3(), 3, &family, &default_grid()).unwrap();
        assert!(report.pass);
        assert!(report.series.iter().all(|s| s.exact));
    }

    #[test]
    fn gamma_stage_two_linear_term_breaks_only_the_weighted_sum() {
        // γ^{(2)} = 1 + h with everything else identity: the weighted sum
        // misses its target-2 decay, while both order-3 products keep
        // their single factor of h.
        let family = GammaFamily {
            out: vec![(0.0, 0.0)],
            stage: vec![vec![(1.0, 0.0)], vec![(0.0, 0.0)]],
        };
        let report =
            gamma_family_report(&ButcherTableau::ssprk3(), 3, &family, &default_grid()).unwrap();
        assert!(!report.pass);
        let by_id = |id: &str| report.series.iter().find(|s| s.id == id).unwrap();
        assert!(!by_id("sum b_i c_i g_i").pass);
        assert!((by_id("sum b_i c_i g_i").slope.unwrap() - 1.0).abs() < 0.05);
        assert!(by_id("sum b_i c_i^2 g_i g_i").pass);
        assert!(by_id("sum b_i a_ij c_j g_i g_j").pass);
        assert!(by_id("gamma_out").exact);
    }

    #[test]
    fn spotcheck_agrees_in_both_directions() {
        let grid = default_grid();
        for (tab, p) in [(ButcherTableau::ssprk3(), 3), (ButcherTableau::rk4(), 4)] {
            let check = reduced_set_spotcheck(&tab, p, 25, 42, &grid).unwrap();
            assert!(check.clean(), "{:?}", check.anomalies);
        }
    }

    #[test]
    fn corollary_consistency_on_the_gallery() {
        let pds = Pds::linear2();
        let grid = deep_grid();
        for scheme in gallery() {
            let report = scheme_u_report(&scheme, &pds, scheme.order, &grid, 7).unwrap();
            assert!(report.pass, "{} u-residuals:\n{}", scheme.name, report.text_table());
            let fit = empirical_order(&scheme, &pds, 1.0, &default_grid()).unwrap();
            assert!(
                fit.order >= scheme.order as f64 - 0.15,
                "{}: empirical {} < {}",
                scheme.name,
                fit.order,
                scheme.order
            );
        }
    }

    #[test]
    fn mono_color_geco_realized_weights_reproduce_phi_conditions() {
        let pds = Pds::linear2();
        let scheme = Scheme::named("geco2").unwrap();
        let Method::Geco { phi } = &scheme.method else { unreachable!() };
        let yn = pds.initial_state().to_vec();
        for &h in &default_grid() {
            let trace = scheme.step(&pds, &yn, h).unwrap();
            let leaf = ColoredTree::leaf(color(1));
            let u = crate::nbseries::nsark_u(&leaf, &trace.realized);
            // Σ_j b_j φ_{n+1} = φ_{n+1} exactly.
            assert!((u - phi.phi_final(&yn, h)).abs() < 1e-15);
        }
    }

    #[test]
    fn denser_grids_do_not_move_slopes() {
        let pds = Pds::linear2();
        let scheme = Scheme::named("mprk22").unwrap();
        let coarse = deep_grid();
        let dense = geometric_grid(0.1, 0.5f64.sqrt(), 23).unwrap();
        let a = scheme_u_report(&scheme, &pds, 2, &coarse, 7).unwrap();
        let b = scheme_u_report(&scheme, &pds, 2, &dense, 7).unwrap();
        for (sa, sb) in a.series.iter().zip(&b.series) {
            assert_eq!(sa.id, sb.id);
            if let (Some(x), Some(y)) = (sa.slope, sb.slope) {
                assert!((x - y).abs() < 0.05, "{}: {x} vs {y}", sa.id);
            }
        }
    }

    #[test]
    fn report_serializes_and_prints() {
        let pds = Pds::linear2();
        let scheme = Scheme::named("mprk11").unwrap();
        let report =
            mprk_conditions(&scheme, &pds, 1, &linear2_states(), &default_grid()).unwrap();
        let json = report.to_json();
        assert!(json.contains("\"sigma vs NB_0\""));
        let table = report.text_table();
        assert!(table.contains("PASS"));
        assert!(table.lines().count() >= 3);
    }
}
