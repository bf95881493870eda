//! GeCo stepping: an explicit RK method with solution-dependent scalar
//! scalings of the stage updates and the output update.

use super::tableau::ButcherTableau;
use super::weights::GecoPhi;
use super::{SolverError, StepTrace};
use crate::nbseries::CoefficientProvider;
use crate::trees::color;

/// One GeCo step: y⁽ⁱ⁾ = yⁿ + φ_i·h·Σ_j a_{ij}F(y⁽ʲ⁾), output scaled by
/// φ_{n+1}. The realized mono-colored coefficients are a_{ij}·φ_i and
/// b_j·φ_{n+1}.
pub fn geco_step(
    tab: &ButcherTableau,
    rhs: &dyn Fn(&[f64]) -> Vec<f64>,
    phi: &GecoPhi,
    yn: &[f64],
    h: f64,
) -> Result<StepTrace, SolverError> {
    if !tab.is_explicit() {
        return Err(SolverError::BadTableau(format!(
            "`{}` is not explicit",
            tab.name()
        )));
    }
    let s = tab.stages();
    let dim = yn.len();

    let mut stages: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut evals: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut phis = Vec::with_capacity(s);
    for i in 0..s {
        let phi_i = phi.phi(i, yn, h);
        phis.push(phi_i);
        let mut stage = yn.to_vec();
        for j in 0..i {
            let w = phi_i * h * tab.a(i, j);
            if w != 0.0 {
                for m in 0..dim {
                    stage[m] += w * evals[j][m];
                }
            }
        }
        evals.push(rhs(&stage));
        stages.push(stage);
    }

    let phi_out = phi.phi_final(yn, h);
    let mut output = yn.to_vec();
    for j in 0..s {
        let w = phi_out * h * tab.b(j);
        if w != 0.0 {
            for m in 0..dim {
                output[m] += w * evals[j][m];
            }
        }
    }

    let mut realized = CoefficientProvider::new(s, 1);
    for i in 0..s {
        for j in 0..i {
            realized.set_a(i, j, color(1), tab.a(i, j) * phis[i]);
        }
        realized.set_b(i, color(1), tab.b(i) * phi_out);
    }

    Ok(StepTrace {
        yn: yn.to_vec(),
        h,
        stages,
        output,
        realized,
        rho: None,
        sigma: None,
        phi: Some((phis, phi_out)),
    })
}
