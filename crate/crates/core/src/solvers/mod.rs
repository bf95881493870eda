//! Time steppers: classical explicit RK, MPRK, GeCo, and the generic
//! NSARK runner that replays any of them from their realized coefficients.

pub mod geco;
pub mod mprk;
pub mod tableau;
pub mod weights;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{Dd, LinalgError};
use crate::nbseries::{CoefficientProvider, NbError};
use crate::pds::Pds;
use crate::trees::{color, Color, TreeError};

pub use geco::geco_step;
pub use mprk::mprk_step;
pub use tableau::{ButcherTableau, TableauSpec};
pub use weights::{GecoPhi, PhiRule, RhoRule, SigmaRule};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Nb(#[from] NbError),
    #[error("component {component} of the state is not positive ({value})")]
    NonpositiveState { component: usize, value: f64 },
    #[error("weight for stage {stage}, component {component} is not positive ({value})")]
    WeightNotPositive { stage: usize, component: usize, value: f64 },
    #[error("solution lost positivity at stage {stage}, component {component} ({value})")]
    LostPositivity { stage: usize, component: usize, value: f64 },
    #[error("tableau: {0}")]
    BadTableau(String),
    #[error("the Patankar stepper requires a non-negative tableau")]
    NegativeTableau,
    #[error("unsupported order {p}")]
    UnsupportedOrder { p: u32 },
    #[error("step size must be positive, got {h}")]
    BadStep { h: f64 },
    #[error("unknown scheme `{0}`")]
    UnknownScheme(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Everything one step produced, including the frozen solution-dependent
/// coefficients that make the step an additive RK update.
#[derive(Clone, Debug)]
pub struct StepTrace {
    pub yn: Vec<f64>,
    pub h: f64,
    pub stages: Vec<Vec<f64>>,
    pub output: Vec<f64>,
    pub realized: CoefficientProvider,
    /// Patankar stage denominators ρ_{iν}, when the stepper has them.
    pub rho: Option<Vec<Vec<f64>>>,
    /// Patankar output denominators σ_ν.
    pub sigma: Option<Vec<f64>>,
    /// GeCo scalings (per-stage φ_i, φ_{n+1}).
    pub phi: Option<(Vec<f64>, f64)>,
}

impl StepTrace {
    /// Re-runs the NSARK update with the realized coefficients.
    pub fn replay<F>(&self, parts: F) -> (Vec<Vec<f64>>, Vec<f64>)
    where
        F: Fn(Color, &[f64]) -> Vec<f64>,
    {
        nsark_step(&self.realized, &parts, &self.yn, self.h)
    }

    /// Largest deviation between the replayed and recorded step, relative
    /// to the state scale.
    pub fn replay_error<F>(&self, parts: F) -> f64
    where
        F: Fn(Color, &[f64]) -> Vec<f64>,
    {
        let (stages, output) = self.replay(parts);
        let scale = self
            .yn
            .iter()
            .fold(f64::MIN_POSITIVE, |acc, v| acc.max(v.abs()));
        let mut worst = 0.0f64;
        for (a, b) in stages.iter().flatten().zip(self.stages.iter().flatten()) {
            worst = worst.max((a - b).abs());
        }
        for (a, b) in output.iter().zip(&self.output) {
            worst = worst.max((a - b).abs());
        }
        worst / scale
    }
}

/// Explicit additive RK update from frozen numeric coefficients: stage i
/// accumulates h·Σ_{j<i,ν} a⁽ᵛ⁾ᵢⱼ F⁽ᵛ⁾(y⁽ʲ⁾). Sums are accumulated in
/// double-double so the replay comparison measures the coefficients, not
/// the summation.
pub fn nsark_step<F>(
    coeff: &CoefficientProvider,
    parts: &F,
    yn: &[f64],
    h: f64,
) -> (Vec<Vec<f64>>, Vec<f64>)
where
    F: Fn(Color, &[f64]) -> Vec<f64>,
{
    let s = coeff.stages();
    let colors = coeff.colors();
    let dim = yn.len();
    let mut stages: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut evals: Vec<Vec<Vec<f64>>> = Vec::with_capacity(s);

    for i in 0..s {
        let mut acc = vec![Dd::ZERO; dim];
        for j in 0..i {
            for nu in 1..=colors {
                let w = coeff.a(i, j, color(nu));
                if w != 0.0 {
                    let f = &evals[j][(nu - 1) as usize];
                    for m in 0..dim {
                        acc[m] = acc[m] + Dd::prod(w, f[m]);
                    }
                }
            }
        }
        let stage: Vec<f64> = (0..dim).map(|m| (acc[m] * h + yn[m]).to_f64()).collect();
        evals.push((1..=colors).map(|nu| parts(color(nu), &stage)).collect());
        stages.push(stage);
    }

    let mut acc = vec![Dd::ZERO; dim];
    for j in 0..s {
        for nu in 1..=colors {
            let w = coeff.b(j, color(nu));
            if w != 0.0 {
                let f = &evals[j][(nu - 1) as usize];
                for m in 0..dim {
                    acc[m] = acc[m] + Dd::prod(w, f[m]);
                }
            }
        }
    }
    let output = (0..dim).map(|m| (acc[m] * h + yn[m]).to_f64()).collect();
    (stages, output)
}

/// One classical explicit RK step; the realized coefficients are the
/// tableau constants.
pub fn rk_step(
    tab: &ButcherTableau,
    rhs: &dyn Fn(&[f64]) -> Vec<f64>,
    yn: &[f64],
    h: f64,
) -> Result<StepTrace, SolverError> {
    geco_step(tab, rhs, &GecoPhi::ones(tab.stages()), yn, h).map(|mut trace| {
        trace.phi = None;
        trace
    })
}

/// Which stepper a scheme uses, with its rule parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Method {
    Rk,
    Mprk { rho: RhoRule, sigma: SigmaRule },
    Geco { phi: GecoPhi },
}

/// A named, runnable configuration: tableau, method, claimed order.
#[derive(Clone, Debug)]
pub struct Scheme {
    pub name: String,
    pub order: u32,
    pub tableau: ButcherTableau,
    pub method: Method,
}

/// Serialized scheme: the tableau may be given by name or by rows.
#[derive(Serialize, Deserialize)]
pub struct SchemeConfig {
    pub name: String,
    pub order: u32,
    pub tableau: TableauRef,
    pub method: Method,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
pub enum TableauRef {
    Named(String),
    Spec(TableauSpec),
}

impl Scheme {
    pub fn step(&self, pds: &Pds, yn: &[f64], h: f64) -> Result<StepTrace, SolverError> {
        match &self.method {
            Method::Rk => rk_step(&self.tableau, &|y| pds.rhs(y), yn, h),
            Method::Mprk { rho, sigma } => mprk_step(&self.tableau, pds, rho, sigma, yn, h),
            Method::Geco { phi } => geco_step(&self.tableau, &|y| pds.rhs(y), phi, yn, h),
        }
    }

    /// Number of colors the realized coefficients carry on this problem.
    pub fn colors(&self, pds: &Pds) -> u32 {
        match self.method {
            Method::Mprk { .. } => pds.species(),
            _ => 1,
        }
    }

    pub fn from_config(config: SchemeConfig) -> Result<Scheme, SolverError> {
        let tableau = match config.tableau {
            TableauRef::Named(name) => ButcherTableau::named(&name)?,
            TableauRef::Spec(spec) => ButcherTableau::from_spec(spec)?,
        };
        Ok(Scheme { name: config.name, order: config.order, tableau, method: config.method })
    }

    pub fn config(&self) -> SchemeConfig {
        SchemeConfig {
            name: self.name.clone(),
            order: self.order,
            tableau: TableauRef::Spec(self.tableau.spec()),
            method: self.method.clone(),
        }
    }

    pub fn from_json(text: &str) -> Result<Scheme, SolverError> {
        Scheme::from_config(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.config()).expect("scheme serializes")
    }

    /// Looks a scheme up in the shipped gallery.
    pub fn named(name: &str) -> Result<Scheme, SolverError> {
        gallery()
            .into_iter()
            .find(|s| s.name == name)
            .ok_or_else(|| SolverError::UnknownScheme(name.to_string()))
    }
}

/// The shipped scheme gallery: classical baselines plus MPRK and GeCo
/// configurations meeting the order conditions at p = 1..4.
pub fn gallery() -> Vec<Scheme> {
    let rk = |name: &str, order, tableau| Scheme {
        name: name.into(),
        order,
        tableau,
        method: Method::Rk,
    };
    let mprk = |name: &str, order, tableau, rho, sigma| Scheme {
        name: name.into(),
        order,
        tableau,
        method: Method::Mprk { rho, sigma },
    };
    let geco = |name: &str, order, tableau, stage, output| Scheme {
        name: name.into(),
        order,
        tableau,
        method: Method::Geco { phi: GecoPhi { stage, output } },
    };
    vec![
        rk("euler", 1, ButcherTableau::euler()),
        rk("heun", 2, ButcherTableau::heun()),
        rk("rk4", 4, ButcherTableau::rk4()),
        mprk("mprk11", 1, ButcherTableau::euler(), RhoRule::Prev, SigmaRule::Yn),
        mprk(
            "mprk22",
            2,
            ButcherTableau::heun(),
            RhoRule::Prev,
            SigmaRule::Predictor { order: 1 },
        ),
        mprk(
            "mprk33",
            3,
            ButcherTableau::ssprk3(),
            RhoRule::Predictor,
            SigmaRule::Predictor { order: 2 },
        ),
        geco(
            "geco1",
            1,
            ButcherTableau::euler(),
            vec![PhiRule::One],
            PhiRule::Rational { alpha: 1.0, k: 1 },
        ),
        geco(
            "geco2",
            2,
            ButcherTableau::heun(),
            vec![PhiRule::One, PhiRule::Rational { alpha: 1.0, k: 1 }],
            PhiRule::Rational { alpha: 1.0, k: 2 },
        ),
        // Σ b_i c_i α_i = 0 keeps the weighted stage condition at O(h²).
        geco(
            "geco3",
            3,
            ButcherTableau::ssprk3(),
            vec![
                PhiRule::One,
                PhiRule::Exp { alpha: 2.0, k: 1 },
                PhiRule::Exp { alpha: -1.0, k: 1 },
            ],
            PhiRule::Exp { alpha: 0.7, k: 3 },
        ),
        geco(
            "geco4",
            4,
            ButcherTableau::rk4(),
            vec![
                PhiRule::One,
                PhiRule::Exp { alpha: 1.0, k: 2 },
                PhiRule::Exp { alpha: -1.0, k: 2 },
                PhiRule::One,
            ],
            PhiRule::Exp { alpha: 0.31, k: 4 },
        ),
    ]
}

/// A fixed-step integration run with per-step traces and the positivity
/// and mass diagnostics accumulated along the way.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub traces: Vec<StepTrace>,
    pub min_component: f64,
    pub max_mass_drift: f64,
}

/// Steps from 0 to t_end with step h; the final step shrinks to land on
/// t_end exactly. Convergence studies should pick h dividing t_end so no
/// shortened step enters the fit.
pub fn integrate(
    scheme: &Scheme,
    pds: &Pds,
    y0: &[f64],
    t_end: f64,
    h: f64,
) -> Result<Trajectory, SolverError> {
    if t_end > 0.0 && !(h > 0.0) {
        return Err(SolverError::BadStep { h });
    }
    let mass0: f64 = y0.iter().sum();
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![y0.to_vec()],
        traces: Vec::new(),
        min_component: y0.iter().cloned().fold(f64::INFINITY, f64::min),
        max_mass_drift: 0.0,
    };
    let mut k: u64 = 0;
    loop {
        let t = k as f64 * h;
        if t >= t_end - h * 1e-12 {
            break;
        }
        let next = ((k + 1) as f64 * h).min(t_end);
        let trace = scheme.step(pds, traj.states.last().unwrap(), next - t)?;
        for v in trace.stages.iter().flatten().chain(&trace.output) {
            traj.min_component = traj.min_component.min(*v);
        }
        let mass: f64 = trace.output.iter().sum();
        traj.max_mass_drift = traj.max_mass_drift.max((mass - mass0).abs() / mass0);
        traj.times.push(next);
        traj.states.push(trace.output.clone());
        traj.traces.push(trace);
        k += 1;
    }
    Ok(traj)
}
