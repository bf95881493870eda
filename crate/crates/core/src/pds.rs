//! Production–destruction systems (PDS) and their additive splitting.
//!
//! A PDS moves mass between species: `y'_m = Σ_ν (p_{mν}(y) − d_{mν}(y))`
//! with nonnegative rates. We only represent *absolutely conservative*
//! systems, where `p_{mν} = d_{νm}`; the destruction matrix is therefore
//! the transpose of the production matrix and is never stored separately,
//! making the conservativity invariant structural.

use serde::Deserialize;

use thiserror::Error;

use crate::nbseries::{DerivativeOracle, MultiDual, Scalar};
use crate::trees::Color;

#[derive(Debug, Error)]
pub enum PdsError {
    #[error("unknown builtin problem `{0}`")]
    UnknownBuiltin(String),
    #[error("production entry on the diagonal (species {m})")]
    DiagonalProduction { m: u32 },
    #[error("negative coefficient {coeff} in p[{m}][{nu}]")]
    NegativeRate { m: u32, nu: u32, coeff: f64 },
    #[error("species index {got} outside 1..={n}")]
    SpeciesRange { got: u32, n: u32 },
    #[error("powers vector has length {got}, expected {n}")]
    PowersLength { got: usize, n: u32 },
    #[error("initial state must be strictly positive with one entry per species")]
    BadInitialState,
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("integrator stalled at h={h:e} after {steps} steps without meeting tolerance")]
    ToleranceNotAchieved { h: f64, steps: u64 },
}

/// `coeff · ∏ y_i^{powers[i]}`.
#[derive(Clone, Debug, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

impl Monomial {
    fn eval<S: Scalar>(&self, y: &[S]) -> S {
        let mut v = y[0].lift(self.coeff);
        for (yi, &p) in y.iter().zip(&self.powers) {
            for _ in 0..p {
                v = v * yi.clone();
            }
        }
        v
    }
}

/// Rational rate law: a sum of monomials over an optional denominator sum.
#[derive(Clone, Debug, Default)]
pub struct Rate {
    terms: Vec<Monomial>,
    denom: Vec<Monomial>,
}

impl Rate {
    fn zero() -> Rate {
        Rate::default()
    }

    fn monomial(coeff: f64, powers: Vec<u32>) -> Rate {
        Rate { terms: vec![Monomial { coeff, powers }], denom: Vec::new() }
    }

    fn over(mut self, denom: Vec<Monomial>) -> Rate {
        self.denom = denom;
        self
    }

    fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    fn eval<S: Scalar>(&self, y: &[S]) -> S {
        let zero = y[0].lift(0.0);
        let num = self
            .terms
            .iter()
            .fold(zero.clone(), |acc, m| acc + m.eval(y));
        if self.denom.is_empty() {
            return num;
        }
        let den = self.denom.iter().fold(zero, |acc, m| acc + m.eval(y));
        num / den
    }
}

/// An absolutely conservative production–destruction system.
#[derive(Clone, Debug)]
pub struct Pds {
    name: String,
    species: u32,
    /// production[m][nu] = p_{m+1,ν+1}; diagonal entries stay zero.
    production: Vec<Vec<Rate>>,
    y0: Vec<f64>,
    exact: Option<fn(&[f64], f64) -> Vec<f64>>,
}

impl Pds {
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Species count N; doubles as the color count of the splitting.
    pub fn species(&self) -> u32 {
        self.species
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.y0
    }

    pub fn has_closed_form(&self) -> bool {
        self.exact.is_some()
    }

    /// Production matrix p_{mν}(y).
    pub fn production(&self, y: &[f64]) -> Vec<Vec<f64>> {
        self.production_generic(y)
    }

    pub fn production_generic<S: Scalar>(&self, y: &[S]) -> Vec<Vec<S>> {
        let zero = y[0].lift(0.0);
        self.production
            .iter()
            .map(|row| {
                row.iter()
                    .map(|r| if r.is_zero() { zero.clone() } else { r.eval(y) })
                    .collect()
            })
            .collect()
    }

    /// Destruction matrix d_{mν}(y) = p_{νm}(y).
    pub fn destruction(&self, y: &[f64]) -> Vec<Vec<f64>> {
        let p = self.production(y);
        let n = self.species as usize;
        (0..n).map(|m| (0..n).map(|nu| p[nu][m]).collect()).collect()
    }

    /// Full right-hand side Σ_ν (p_{mν} − d_{mν}).
    pub fn rhs(&self, y: &[f64]) -> Vec<f64> {
        let p = self.production(y);
        let n = self.species as usize;
        (0..n)
            .map(|m| {
                (0..n)
                    .map(|nu| p[m][nu] - p[nu][m])
                    .sum()
            })
            .collect()
    }

    /// The N-way additive splitting of the right-hand side.
    pub fn split(&self) -> SplitRhs<'_> {
        SplitRhs { pds: self }
    }

    /// Builtin test problems: `linear2`, `nonlinear3`, `robertson-like`.
    pub fn builtin(name: &str) -> Result<Pds, PdsError> {
        match name {
            "linear2" => Ok(Pds::linear2()),
            "nonlinear3" => Ok(Pds::nonlinear3()),
            "robertson-like" => Ok(Pds::robertson_like()),
            other => Err(PdsError::UnknownBuiltin(other.to_string())),
        }
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &["linear2", "nonlinear3", "robertson-like"]
    }

    /// Linear exchange between two species: p₁₂ = y₂, p₂₁ = 5y₁. The rate
    /// matrix has eigenvalues {0, −6}; mass settles to (1/6, 5/6)·Σy⁰.
    pub fn linear2() -> Pds {
        let mut production = empty_rates(2);
        production[0][1] = Rate::monomial(1.0, vec![0, 1]);
        production[1][0] = Rate::monomial(5.0, vec![1, 0]);
        Pds {
            name: "linear2".into(),
            species: 2,
            production,
            y0: vec![0.9, 0.1],
            exact: Some(linear2_exact),
        }
    }

    /// Three-species nonlinear conversion chain with a saturating first
    /// step: p₂₁ = y₁y₂/(1+y₁), p₃₂ = 0.3·y₂.
    pub fn nonlinear3() -> Pds {
        let mut production = empty_rates(3);
        production[1][0] = Rate::monomial(1.0, vec![1, 1, 0])
            .over(vec![
                Monomial { coeff: 1.0, powers: vec![0, 0, 0] },
                Monomial { coeff: 1.0, powers: vec![1, 0, 0] },
            ]);
        production[2][1] = Rate::monomial(0.3, vec![0, 1, 0]);
        Pds {
            name: "nonlinear3".into(),
            species: 3,
            production,
            y0: vec![9.98, 0.01, 0.01],
            exact: None,
        }
    }

    /// Stiff three-species reaction cycle with the classic rate constants
    /// but a strictly positive initial state.
    pub fn robertson_like() -> Pds {
        let mut production = empty_rates(3);
        production[1][0] = Rate::monomial(4e-2, vec![1, 0, 0]);
        production[0][1] = Rate::monomial(1e4, vec![0, 1, 1]);
        production[2][1] = Rate::monomial(3e7, vec![0, 2, 0]);
        Pds {
            name: "robertson-like".into(),
            species: 3,
            production,
            y0: vec![1.0, 1e-4, 1e-4],
            exact: None,
        }
    }

    /// Loads a polynomial-rate problem from JSON:
    /// `{"N": .., "productions": [{"m", "nu", "monomial": {"coeff", "powers"}}, ..], "y0": [..]}`.
    /// Species indices are 1-based; repeated (m, nu) entries accumulate.
    pub fn from_json(text: &str) -> Result<Pds, PdsError> {
        #[derive(Deserialize)]
        struct Entry {
            m: u32,
            nu: u32,
            monomial: Monomial,
        }
        #[derive(Deserialize)]
        struct Doc {
            #[serde(rename = "N")]
            n: u32,
            productions: Vec<Entry>,
            y0: Vec<f64>,
            name: Option<String>,
        }

        let doc: Doc = serde_json::from_str(text)?;
        let n = doc.n;
        let mut production = empty_rates(n as usize);
        for e in doc.productions {
            if e.m == e.nu {
                return Err(PdsError::DiagonalProduction { m: e.m });
            }
            for &idx in [e.m, e.nu].iter() {
                if idx < 1 || idx > n {
                    return Err(PdsError::SpeciesRange { got: idx, n });
                }
            }
            if e.monomial.coeff < 0.0 {
                return Err(PdsError::NegativeRate {
                    m: e.m,
                    nu: e.nu,
                    coeff: e.monomial.coeff,
                });
            }
            if e.monomial.powers.len() != n as usize {
                return Err(PdsError::PowersLength { got: e.monomial.powers.len(), n });
            }
            production[(e.m - 1) as usize][(e.nu - 1) as usize]
                .terms
                .push(e.monomial);
        }
        if doc.y0.len() != n as usize || doc.y0.iter().any(|&v| v <= 0.0) {
            return Err(PdsError::BadInitialState);
        }
        Ok(Pds {
            name: doc.name.unwrap_or_else(|| "custom".into()),
            species: n,
            production,
            y0: doc.y0,
            exact: None,
        })
    }

    /// High-accuracy flow map. Uses the closed form when one is known,
    /// otherwise the embedded adaptive integrator at tolerance 1e−12.
    pub fn reference_solution(&self, y0: &[f64], t: f64) -> Result<Vec<f64>, PdsError> {
        if let Some(exact) = self.exact {
            return Ok(exact(y0, t));
        }
        self.adaptive_flow(y0, t, 1e-12, 1e-12)
    }

    /// Dormand–Prince 5(4) with step-size control; exposed so tests can
    /// cross-check the adaptive path against closed forms and itself.
    pub fn adaptive_flow(
        &self,
        y0: &[f64],
        t: f64,
        rtol: f64,
        atol: f64,
    ) -> Result<Vec<f64>, PdsError> {
        if t == 0.0 {
            return Ok(y0.to_vec());
        }
        dormand_prince(|y| self.rhs(y), y0, t, rtol, atol)
    }
}

fn empty_rates(n: usize) -> Vec<Vec<Rate>> {
    (0..n).map(|_| (0..n).map(|_| Rate::zero()).collect()).collect()
}

fn linear2_exact(y0: &[f64], t: f64) -> Vec<f64> {
    if t == 0.0 {
        return y0.to_vec();
    }
    // Eigenpairs of [[-5, 1], [5, -1]]: null vector (1, 5)/6, and (1, -1)
    // decaying at rate 6.
    let total = y0[0] + y0[1];
    let steady = [total / 6.0, 5.0 * total / 6.0];
    let decay = (-6.0 * t).exp();
    vec![
        steady[0] + decay * (y0[0] - steady[0]),
        steady[1] + decay * (y0[1] - steady[1]),
    ]
}

/// The additive components F⁽ᵛ⁾ of a PDS right-hand side: production column
/// ν feeds every species, destruction drains species ν itself.
pub struct SplitRhs<'a> {
    pds: &'a Pds,
}

impl SplitRhs<'_> {
    pub fn parts(&self) -> u32 {
        self.pds.species
    }

    pub fn dim(&self) -> usize {
        self.pds.species as usize
    }

    /// F⁽ᵛ⁾(y): component m is p_{mν}(y) off the ν-th row and
    /// −Σ_j d_{νj}(y) = −Σ_j p_{jν}(y) on it.
    pub fn part(&self, nu: Color, y: &[f64]) -> Vec<f64> {
        self.part_generic(nu, y)
    }

    pub fn part_generic<S: Scalar>(&self, nu: Color, y: &[S]) -> Vec<S> {
        let p = self.pds.production_generic(y);
        let n = self.pds.species as usize;
        let zero = y[0].lift(0.0);
        let col = nu.idx0();
        (0..n)
            .map(|m| {
                if m == col {
                    -(0..n).fold(zero.clone(), |acc, j| acc + p[j][col].clone())
                } else {
                    p[m][col].clone()
                }
            })
            .collect()
    }

    /// Σ_ν F⁽ᵛ⁾(y), which must agree with the direct p − d evaluation.
    pub fn total(&self, y: &[f64]) -> Vec<f64> {
        let n = self.pds.species;
        let mut out = vec![0.0; n as usize];
        for nu in 1..=n {
            for (o, v) in out.iter_mut().zip(self.part(Color::new(nu), y)) {
                *o += v;
            }
        }
        out
    }
}

impl DerivativeOracle for SplitRhs<'_> {
    fn colors(&self) -> u32 {
        self.pds.species
    }

    fn dim(&self) -> usize {
        self.pds.species as usize
    }

    fn eval(&self, color: Color, y: &[f64]) -> Vec<f64> {
        self.part(color, y)
    }

    fn deriv(&self, color: Color, y: &[f64], directions: &[Vec<f64>]) -> Vec<f64> {
        if directions.is_empty() {
            return self.part(color, y);
        }
        let duals: Vec<MultiDual> = y
            .iter()
            .enumerate()
            .map(|(m, &v)| {
                let seeds: Vec<f64> = directions.iter().map(|d| d[m]).collect();
                MultiDual::seeded(v, &seeds)
            })
            .collect();
        self.part_generic(color, &duals)
            .into_iter()
            .map(|d| d.mixed())
            .collect()
    }
}

/// Dormand–Prince 5(4) with standard error control.
fn dormand_prince(
    f: impl Fn(&[f64]) -> Vec<f64>,
    y0: &[f64],
    t_end: f64,
    rtol: f64,
    atol: f64,
) -> Result<Vec<f64>, PdsError> {
    const A: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [
            19372.0 / 6561.0,
            -25360.0 / 2187.0,
            64448.0 / 6561.0,
            -212.0 / 729.0,
            0.0,
            0.0,
        ],
        [
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
            0.0,
        ],
        [
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
        ],
    ];
    const B5: [f64; 7] = [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
        0.0,
    ];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];

    let dim = y0.len();
    let mut y = y0.to_vec();
    let mut t = 0.0;
    let mut h = (t_end / 100.0).min(1e-2).max(1e-10);
    let mut steps: u64 = 0;
    const MAX_STEPS: u64 = 20_000_000;

    while t < t_end {
        if steps > MAX_STEPS || h < 1e-14 * t_end.max(1.0) {
            return Err(PdsError::ToleranceNotAchieved { h, steps });
        }
        steps += 1;
        let h_step = h.min(t_end - t);

        let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
        k.push(f(&y));
        for stage in 0..6 {
            let mut arg = y.clone();
            for (j, kj) in k.iter().enumerate() {
                let a = A[stage][j];
                if a != 0.0 {
                    for m in 0..dim {
                        arg[m] += h_step * a * kj[m];
                    }
                }
            }
            k.push(f(&arg));
        }

        let mut y5 = y.clone();
        let mut err = vec![0.0; dim];
        for (j, kj) in k.iter().enumerate() {
            for m in 0..dim {
                y5[m] += h_step * B5[j] * kj[m];
                err[m] += h_step * (B5[j] - B4[j]) * kj[m];
            }
        }

        let mut norm = 0.0;
        for m in 0..dim {
            let scale = atol + rtol * y[m].abs().max(y5[m].abs());
            norm += (err[m] / scale) * (err[m] / scale);
        }
        norm = (norm / dim as f64).sqrt();

        if norm <= 1.0 {
            t += h_step;
            y = y5;
        }
        let factor = if norm > 0.0 {
            (0.9 * norm.powf(-0.2)).clamp(0.2, 5.0)
        } else {
            5.0
        };
        h = h_step * factor;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::color;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_positive_state(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(0.05..4.0)).collect()
    }

    #[test]
    fn linear2_split_hand_values() {
        let pds = Pds::linear2();
        let split = pds.split();
        let y = [0.9, 0.1];
        let f1 = split.part(color(1), &y);
        let f2 = split.part(color(2), &y);
        assert_eq!(f1, vec![-4.5, 4.5]);
        assert_eq!(f2, vec![0.1, -0.1]);
        let total = split.total(&y);
        let rhs = pds.rhs(&y);
        for (a, b) in total.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn split_components_sum_to_zero_mass_change() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for name in Pds::builtin_names() {
            let pds = Pds::builtin(name).unwrap();
            let split = pds.split();
            for _ in 0..1000 {
                let y = random_positive_state(&mut rng, pds.species() as usize);
                let total_mass_rate: f64 = split.total(&y).iter().sum();
                let unit: f64 = y.iter().sum();
                assert!(
                    total_mass_rate.abs() <= 1e-14 * unit.max(1.0) * 3e7,
                    "{name}: {total_mass_rate:e}"
                );
            }
        }
    }

    #[test]
    fn production_is_transposed_destruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for name in Pds::builtin_names() {
            let pds = Pds::builtin(name).unwrap();
            let n = pds.species() as usize;
            for _ in 0..50 {
                let y = random_positive_state(&mut rng, n);
                let p = pds.production(&y);
                let d = pds.destruction(&y);
                for m in 0..n {
                    assert_eq!(p[m][m], 0.0);
                    for nu in 0..n {
                        assert_eq!(p[m][nu], d[nu][m]);
                        assert!(p[m][nu] >= 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_production_means_zero_split() {
        let pds = Pds {
            name: "empty".into(),
            species: 3,
            production: empty_rates(3),
            y0: vec![1.0, 1.0, 1.0],
            exact: None,
        };
        let split = pds.split();
        for nu in 1..=3 {
            assert_eq!(split.part(color(nu), &[0.3, 0.7, 1.9]), vec![0.0; 3]);
        }
    }

    #[test]
    fn adaptive_flow_matches_linear2_closed_form() {
        let pds = Pds::linear2();
        let y0 = pds.initial_state().to_vec();
        let numeric = pds.adaptive_flow(&y0, 1.0, 1e-12, 1e-12).unwrap();
        let exact = linear2_exact(&y0, 1.0);
        for (a, b) in numeric.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        // reference_solution prefers the closed form here.
        let reference = pds.reference_solution(&y0, 1.0).unwrap();
        assert_eq!(reference, exact);
    }

    #[test]
    fn reference_at_zero_time_is_identity() {
        for name in Pds::builtin_names() {
            let pds = Pds::builtin(name).unwrap();
            let y0 = pds.initial_state().to_vec();
            assert_eq!(pds.reference_solution(&y0, 0.0).unwrap(), y0);
        }
    }

    #[test]
    fn nonlinear3_reference_self_consistent() {
        let pds = Pds::nonlinear3();
        let y0 = pds.initial_state().to_vec();
        let a = pds.adaptive_flow(&y0, 1.0, 1e-12, 1e-12).unwrap();
        let b = pds.adaptive_flow(&y0, 1.0, 5e-13, 5e-13).unwrap();
        for (x, z) in a.iter().zip(&b) {
            assert!((x - z).abs() < 1e-9, "{x} vs {z}");
        }
    }

    #[test]
    fn builtins_conserve_mass_along_the_flow() {
        for name in ["linear2", "nonlinear3"] {
            let pds = Pds::builtin(name).unwrap();
            let y0 = pds.initial_state().to_vec();
            let mass0: f64 = y0.iter().sum();
            let yt = pds.reference_solution(&y0, 1.0).unwrap();
            let mass: f64 = yt.iter().sum();
            assert!((mass - mass0).abs() < 1e-10, "{name}: {mass} vs {mass0}");
        }
    }

    #[test]
    fn unknown_builtin_is_an_error() {
        match Pds::builtin("linear9000") {
            Err(PdsError::UnknownBuiltin(name)) => assert_eq!(name, "linear9000"),
            other => panic!("expected unknown-builtin, got {other:?}"),
        }
    }

    #[test]
    fn json_loader_round_trips_linear2() {
        let text = r#"{
            "N": 2,
            "productions": [
                {"m": 1, "nu": 2, "monomial": {"coeff": 1.0, "powers": [0, 1]}},
                {"m": 2, "nu": 1, "monomial": {"coeff": 5.0, "powers": [1, 0]}}
            ],
            "y0": [0.9, 0.1]
        }"#;
        let loaded = Pds::from_json(text).unwrap();
        let builtin = Pds::linear2();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let y = random_positive_state(&mut rng, 2);
            let a = loaded.rhs(&y);
            let b = builtin.rhs(&y);
            for (x, z) in a.iter().zip(&b) {
                assert!((x - z).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn json_loader_rejects_bad_input() {
        let diagonal = r#"{"N": 2, "productions": [{"m": 1, "nu": 1,
            "monomial": {"coeff": 1.0, "powers": [1, 0]}}], "y0": [1.0, 1.0]}"#;
        assert!(matches!(
            Pds::from_json(diagonal),
            Err(PdsError::DiagonalProduction { m: 1 })
        ));

        let negative = r#"{"N": 2, "productions": [{"m": 1, "nu": 2,
            "monomial": {"coeff": -2.0, "powers": [0, 1]}}], "y0": [1.0, 1.0]}"#;
        assert!(matches!(Pds::from_json(negative), Err(PdsError::NegativeRate { .. })));

        let range = r#"{"N": 2, "productions": [{"m": 1, "nu": 3,
            "monomial": {"coeff": 1.0, "powers": [0, 1]}}], "y0": [1.0, 1.0]}"#;
        assert!(matches!(Pds::from_json(range), Err(PdsError::SpeciesRange { got: 3, n: 2 })));

        let state = r#"{"N": 2, "productions": [], "y0": [1.0, 0.0]}"#;
        assert!(matches!(Pds::from_json(state), Err(PdsError::BadInitialState)));
    }

    #[test]
    fn split_oracle_derivatives_match_finite_differences() {
        let pds = Pds::nonlinear3();
        let split = pds.split();
        let y = vec![2.0, 1.5, 0.5];
        let dir = vec![0.3, -0.2, 0.1];
        let eps = 1e-6;
        for nu in 1..=3 {
            let got = split.deriv(color(nu), &y, &[dir.clone()]);
            let yp: Vec<f64> = y.iter().zip(&dir).map(|(a, b)| a + eps * b).collect();
            let ym: Vec<f64> = y.iter().zip(&dir).map(|(a, b)| a - eps * b).collect();
            let fp = split.part(color(nu), &yp);
            let fm = split.part(color(nu), &ym);
            for m in 0..3 {
                let fd = (fp[m] - fm[m]) / (2.0 * eps);
                assert!((got[m] - fd).abs() < 1e-7, "nu={nu} m={m}");
            }
        }
    }
}
