//! Modified Patankar–Runge–Kutta stepping.
//!
//! Each stage solves one N×N linear system whose off-diagonal entries are
//! non-positive and whose columns sum to one, so the solution stays
//! positive and the total mass is preserved for every step size. The
//! matrix is assembled and solved in double-double arithmetic: at large
//! h·rate/ρ the system entries dwarf the solution and plain f64 residuals
//! would eat the conservativity budget.

use super::tableau::ButcherTableau;
use super::weights::{RhoRule, SigmaRule};
use super::{SolverError, StepTrace};
use crate::linalg::{solve_dd, Dd};
use crate::nbseries::CoefficientProvider;
use crate::pds::Pds;
use crate::trees::color;

/// One MPRK step. The realized NSARK coefficients are
/// a⁽ᵛ⁾ᵢⱼ = a_{ij}·y⁽ⁱ⁾_ν/ρ_{iν} and b⁽ᵛ⁾ⱼ = b_j·yⁿ⁺¹_ν/σ_ν.
pub fn mprk_step(
    tab: &ButcherTableau,
    pds: &Pds,
    rho: &RhoRule,
    sigma: &SigmaRule,
    yn: &[f64],
    h: f64,
) -> Result<StepTrace, SolverError> {
    let n = pds.species() as usize;
    if yn.len() != n {
        return Err(SolverError::BadTableau(format!(
            "state has {} components, problem has {n}",
            yn.len()
        )));
    }
    for (component, &v) in yn.iter().enumerate() {
        if !(v > 0.0) {
            return Err(SolverError::NonpositiveState { component, value: v });
        }
    }
    if !tab.is_explicit() {
        return Err(SolverError::BadTableau(format!(
            "`{}` is not explicit",
            tab.name()
        )));
    }
    if !tab.is_nonnegative() {
        return Err(SolverError::NegativeTableau);
    }

    let s = tab.stages();
    let mut stages: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut productions: Vec<Vec<Vec<f64>>> = Vec::with_capacity(s);
    let mut rhos: Vec<Vec<f64>> = Vec::with_capacity(s);

    for i in 0..s {
        let denoms = rho.values(pds, tab, yn, h, &stages, i)?;
        let weights: Vec<f64> = (0..i).map(|j| h * tab.a(i, j)).collect();
        let stage = patankar_solve(yn, &weights, &productions, &denoms, i)?;
        productions.push(pds.production(&stage));
        stages.push(stage);
        rhos.push(denoms);
    }

    let sigmas = sigma.values(pds, yn, h, &stages)?;
    let weights: Vec<f64> = (0..s).map(|j| h * tab.b(j)).collect();
    let output = patankar_solve(yn, &weights, &productions, &sigmas, s)?;

    let mut realized = CoefficientProvider::new(s, pds.species());
    for nu in 1..=pds.species() {
        let c = color(nu);
        let k = c.idx0();
        for i in 0..s {
            for j in 0..i {
                realized.set_a(i, j, c, tab.a(i, j) * stages[i][k] / rhos[i][k]);
            }
        }
        for j in 0..s {
            realized.set_b(j, c, tab.b(j) * output[k] / sigmas[k]);
        }
    }

    Ok(StepTrace {
        yn: yn.to_vec(),
        h,
        stages,
        output,
        realized,
        rho: Some(rhos),
        sigma: Some(sigmas),
        phi: None,
    })
}

/// Solves x = yⁿ + Σ_j w_j Σ_ν (p_{mν}(v_j)·x_ν/d_ν − p_{νm}(v_j)·x_m/d_m)
/// for x, given the production matrices at the argument states v_j.
fn patankar_solve(
    yn: &[f64],
    weights: &[f64],
    productions: &[Vec<Vec<f64>>],
    denoms: &[f64],
    stage: usize,
) -> Result<Vec<f64>, SolverError> {
    let n = yn.len();

    // acc[m][ν] = Σ_j w_j p_{mν}(v_j), then q = acc / d_ν columnwise.
    let mut q = vec![vec![Dd::ZERO; n]; n];
    for (j, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let p = &productions[j];
        for m in 0..n {
            for nu in 0..n {
                if m != nu {
                    q[m][nu] = q[m][nu] + Dd::prod(w, p[m][nu]);
                }
            }
        }
    }
    for (nu, &d) in denoms.iter().enumerate() {
        for row in q.iter_mut() {
            row[nu] = row[nu] / Dd::new(d);
        }
    }

    // Diagonal built from the same column entries keeps every column sum
    // at exactly one, which is where conservativity comes from.
    let mut matrix = vec![vec![Dd::ZERO; n]; n];
    for m in 0..n {
        for nu in 0..n {
            if m == nu {
                let mut diag = Dd::ONE;
                for k in 0..n {
                    if k != m {
                        diag = diag + q[k][m];
                    }
                }
                matrix[m][m] = diag;
            } else {
                matrix[m][nu] = -q[m][nu];
            }
        }
    }

    let rhs: Vec<Dd> = yn.iter().map(|&v| Dd::new(v)).collect();
    let solution = solve_dd(matrix, rhs)?;
    let out: Vec<f64> = solution.iter().map(|d| d.to_f64()).collect();
    for (component, &v) in out.iter().enumerate() {
        if !(v > 0.0) || !v.is_finite() {
            return Err(SolverError::LostPositivity { stage, component, value: v });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::weights::{stage_series, total_derivative};

    fn mass(y: &[f64]) -> f64 {
        y.iter().sum()
    }

    #[test]
    fn zero_step_is_the_identity() {
        let pds = Pds::nonlinear3();
        let yn = pds.initial_state().to_vec();
        let trace = mprk_step(
            &ButcherTableau::heun(),
            &pds,
            &RhoRule::Prev,
            &SigmaRule::Yn,
            &yn,
            0.0,
        )
        .unwrap();
        assert_eq!(trace.output, yn);
        for stage in &trace.stages {
            assert_eq!(stage, &yn);
        }
    }

    #[test]
    fn positive_and_conservative_across_twelve_decades() {
        for name in Pds::builtin_names() {
            let pds = Pds::builtin(name).unwrap();
            let yn = pds.initial_state().to_vec();
            let m0 = mass(&yn);
            for k in -3..=3 {
                let h = 10f64.powi(k);
                let trace = mprk_step(
                    &ButcherTableau::heun(),
                    &pds,
                    &RhoRule::Prev,
                    &SigmaRule::Predictor { order: 1 },
                    &yn,
                    h,
                )
                .unwrap();
                for stage in trace.stages.iter().chain([&trace.output]) {
                    assert!(stage.iter().all(|&v| v > 0.0), "{name} h={h}");
                }
                let drift = (mass(&trace.output) - m0).abs() / m0;
                assert!(drift <= 1e-13, "{name} h={h}: drift {drift:e}");
            }
        }
    }

    #[test]
    fn replay_with_realized_coefficients_reproduces_the_step() {
        let pds = Pds::linear2();
        let split = pds.split();
        let yn = pds.initial_state().to_vec();
        for k in -3..=1 {
            let h = 10f64.powi(k);
            let trace = mprk_step(
                &ButcherTableau::ssprk3(),
                &pds,
                &RhoRule::Predictor,
                &SigmaRule::Predictor { order: 2 },
                &yn,
                h,
            )
            .unwrap();
            let err = trace.replay_error(|c, y| split.part(c, y));
            assert!(err <= 1e-13, "h={h}: replay error {err:e}");
        }
    }

    #[test]
    fn realized_coefficients_stay_bounded_as_h_shrinks() {
        let pds = Pds::linear2();
        let yn = pds.initial_state().to_vec();
        let mut h = 1.0;
        for _ in 0..20 {
            let trace = mprk_step(
                &ButcherTableau::heun(),
                &pds,
                &RhoRule::Prev,
                &SigmaRule::Predictor { order: 1 },
                &yn,
                h,
            )
            .unwrap();
            let r = &trace.realized;
            for nu in 1..=2 {
                for i in 0..2 {
                    for j in 0..2 {
                        assert!(r.a(i, j, color(nu)).abs() <= 20.0);
                    }
                    assert!(r.b(i, color(nu)).abs() <= 20.0);
                }
            }
            h *= 0.5;
        }
    }

    #[test]
    fn sigma_equal_yn_gives_first_order_error_decay() {
        let pds = Pds::linear2();
        let y0 = pds.initial_state().to_vec();
        let err = |h: f64| {
            let mut y = y0.clone();
            let steps = (1.0 / h).round() as usize;
            for _ in 0..steps {
                y = mprk_step(
                    &ButcherTableau::heun(),
                    &pds,
                    &RhoRule::Prev,
                    &SigmaRule::Yn,
                    &y,
                    h,
                )
                .unwrap()
                .output;
            }
            let exact = pds.reference_solution(&y0, 1.0).unwrap();
            y.iter()
                .zip(&exact)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(0.01) / err(0.005);
        assert!((ratio - 2.0).abs() < 0.5, "ratio {ratio}");
    }

    #[test]
    fn stage_curvature_matches_the_runge_kutta_expansion() {
        // With ρ accurate to O(h²) the stage ratios are 1 + O(h²) and the
        // stages follow the underlying RK expansion: the h² coefficient of
        // stage 3 of ssprk3 is Σ_k a_{3k}c_k (DF·F) = ¼·(DF·F).
        let pds = Pds::linear2();
        let tab = ButcherTableau::ssprk3();
        let yn = pds.initial_state().to_vec();
        let f = pds.rhs(&yn);
        let dff = total_derivative(&pds, &yn);
        let curvature = |h: f64| -> Vec<f64> {
            let trace = mprk_step(
                &tab,
                &pds,
                &RhoRule::Series { order: 2, skew: vec![] },
                &SigmaRule::Predictor { order: 2 },
                &yn,
                h,
            )
            .unwrap();
            (0..2)
                .map(|m| (trace.stages[2][m] - yn[m] - h * tab.c(2) * f[m]) / (h * h))
                .collect()
        };
        let got = curvature(1e-4);
        for m in 0..2 {
            let expect = 0.25 * dff[m];
            assert!(
                (got[m] - expect).abs() < 1e-2 * expect.abs().max(1.0),
                "m={m}: {} vs {expect}",
                got[m]
            );
        }
    }

    #[test]
    fn series_rho_skew_preserves_the_weighted_sum_exactly() {
        // ρ_{iν} = series/(1 − x_i h) with Σ b_i c_i x_i = 0 leaves
        // Σ b_i c_i · series_ν/ρ_{iν} at exactly 1/2.
        let pds = Pds::linear2();
        let tab = ButcherTableau::rk4();
        let yn = pds.initial_state().to_vec();
        let skew = vec![0.0, 1.0, -1.0, 0.0];
        let h = 0.05;
        let trace = mprk_step(
            &tab,
            &pds,
            &RhoRule::Series { order: 2, skew: skew.clone() },
            &SigmaRule::Predictor { order: 3 },
            &yn,
            h,
        )
        .unwrap();
        let rho = trace.rho.as_ref().unwrap();
        for nu in 0..2 {
            let mut sum = 0.0;
            for i in 1..4 {
                let series = stage_series(&pds, &tab, &yn, h, i, 2);
                sum += tab.b(i) * tab.c(i) * series[nu] / rho[i][nu];
            }
            assert!((sum - 0.5).abs() < 1e-14, "nu={nu}: {sum}");
        }
    }

    #[test]
    fn input_validation_errors() {
        let pds = Pds::linear2();
        assert!(matches!(
            mprk_step(
                &ButcherTableau::heun(),
                &pds,
                &RhoRule::Prev,
                &SigmaRule::Yn,
                &[0.9, 0.0],
                0.1
            ),
            Err(SolverError::NonpositiveState { component: 1, .. })
        ));

        let signed = ButcherTableau::new(
            "signed",
            vec![vec![0.0, 0.0], vec![1.0, 0.0]],
            vec![1.5, -0.5],
        )
        .unwrap();
        assert!(matches!(
            mprk_step(&signed, &pds, &RhoRule::Prev, &SigmaRule::Yn, &[0.9, 0.1], 0.1),
            Err(SolverError::NegativeTableau)
        ));
    }
}
