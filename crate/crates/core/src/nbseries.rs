//! NB-series machinery: elementary differentials, truncated series, and the
//! elementary weights u(τ) of schemes whose coefficients depend on the
//! solution and the step size.
//!
//! The weight of a tree is computed two ways: the g/d mutual recursion
//! (fast, memoized over shared subtrees) and a brute-force sum over all
//! stage labelings of the nodes (slow, but independent enough to serve as
//! an oracle for the recursion).

use std::collections::HashMap;
use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

use crate::trees::{enumerate, ColoredTree, Color, NTreeSet, TreeError};

/// Largest number of dual generators supported, i.e. highest derivative
/// order reachable through [`MultiDual`]. Trees of order ≤ 6 contract at
/// most 5 directions at the root.
pub const MAX_DUAL_ORDER: u32 = 5;

/// Guard for the label-sum oracle: number of labelings `s^|τ|`.
pub const LABELING_GUARD: u128 = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum NbError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("tree uses color {color} but the oracle has {n} colors")]
    ColorRange { color: u32, n: u32 },
    #[error("tree contracts {needed} directions, oracle supports {supported}")]
    DerivativeOrder { needed: u32, supported: u32 },
    #[error("no series coefficient supplied for tree {tree}")]
    MissingCoefficient { tree: String },
    #[error("label space of {states} assignments exceeds the {limit} guard")]
    LabelingExplosion { states: u128, limit: u128 },
}

/// Anything that can be evaluated along a truncated multivariate Taylor
/// expansion (plain numbers, [`MultiDual`]).
pub trait Scalar:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// A constant with the same dual shape as `self`.
    fn lift(&self, x: f64) -> Self;
}

impl Scalar for f64 {
    fn lift(&self, x: f64) -> f64 {
        x
    }
}

/// Truncated Taylor polynomial in `k` pairwise-nilpotent generators
/// ε₁,..,ε_k (εᵢ² = 0). Coefficients are indexed by generator subset, so
/// the full-mask coefficient of a function value is exactly the mixed
/// partial ∂_{t₁..t_k} f(y + Σ tᵢ vᵢ)|₀, the k-th derivative tensor
/// contracted with the seed directions.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiDual {
    generators: u32,
    c: Vec<f64>,
}

impl MultiDual {
    pub fn constant(generators: u32, value: f64) -> MultiDual {
        assert!(generators <= MAX_DUAL_ORDER, "dual order too high");
        let mut c = vec![0.0; 1 << generators];
        c[0] = value;
        MultiDual { generators, c }
    }

    /// `value + Σ_t seeds[t] ε_t`.
    pub fn seeded(value: f64, seeds: &[f64]) -> MultiDual {
        let generators = seeds.len() as u32;
        let mut dual = MultiDual::constant(generators, value);
        for (t, &s) in seeds.iter().enumerate() {
            dual.c[1 << t] = s;
        }
        dual
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// Coefficient of ε₁ε₂⋯ε_k: the fully mixed partial.
    pub fn mixed(&self) -> f64 {
        self.c[self.c.len() - 1]
    }
}

impl Scalar for MultiDual {
    fn lift(&self, x: f64) -> MultiDual {
        MultiDual::constant(self.generators, x)
    }
}

impl Add for MultiDual {
    type Output = MultiDual;
    fn add(mut self, o: MultiDual) -> MultiDual {
        assert_eq!(self.generators, o.generators);
        for (a, b) in self.c.iter_mut().zip(&o.c) {
            *a += b;
        }
        self
    }
}

impl Sub for MultiDual {
    type Output = MultiDual;
    fn sub(mut self, o: MultiDual) -> MultiDual {
        assert_eq!(self.generators, o.generators);
        for (a, b) in self.c.iter_mut().zip(&o.c) {
            *a -= b;
        }
        self
    }
}

impl Neg for MultiDual {
    type Output = MultiDual;
    fn neg(mut self) -> MultiDual {
        for a in self.c.iter_mut() {
            *a = -*a;
        }
        self
    }
}

impl Mul for MultiDual {
    type Output = MultiDual;
    fn mul(self, o: MultiDual) -> MultiDual {
        assert_eq!(self.generators, o.generators);
        let mut out = vec![0.0; self.c.len()];
        // (fg)[S] = Σ_{A ⊆ S} f[A] g[S∖A]: subset convolution over disjoint
        // generator sets, since each εᵢ squares to zero.
        for (s, slot) in out.iter_mut().enumerate() {
            let mut a = s;
            loop {
                *slot += self.c[a] * o.c[s ^ a];
                if a == 0 {
                    break;
                }
                a = (a - 1) & s;
            }
        }
        MultiDual { generators: self.generators, c: out }
    }
}

impl Div for MultiDual {
    type Output = MultiDual;
    fn div(self, o: MultiDual) -> MultiDual {
        assert_eq!(self.generators, o.generators);
        let y0 = o.c[0];
        assert!(y0 != 0.0, "dual division by a zero-valued dual");
        // Solve z·o = self by forward substitution in mask order; each
        // mask only couples to strictly smaller submasks.
        let mut z = vec![0.0; self.c.len()];
        for s in 0..self.c.len() {
            let mut acc = self.c[s];
            let mut a = (s.wrapping_sub(1)) & s;
            while s != 0 {
                acc -= z[a] * o.c[s ^ a];
                if a == 0 {
                    break;
                }
                a = (a - 1) & s;
            }
            z[s] = acc / y0;
        }
        MultiDual { generators: self.generators, c: z }
    }
}

/// Supplies each additive component F⁽ᵛ⁾ and its directional derivatives.
pub trait DerivativeOracle {
    /// Number of additive components / colors N.
    fn colors(&self) -> u32;
    /// State dimension d.
    fn dim(&self) -> usize;
    /// F⁽ᵛ⁾(y).
    fn eval(&self, color: Color, y: &[f64]) -> Vec<f64>;
    /// k-th derivative tensor of F⁽ᵛ⁾ at y contracted with k directions.
    /// With no directions this must equal `eval`.
    fn deriv(&self, color: Color, y: &[f64], directions: &[Vec<f64>]) -> Vec<f64>;
    /// Highest contraction order `deriv` accepts.
    fn supported_derivative_order(&self) -> u32 {
        MAX_DUAL_ORDER
    }
}

/// Derivative oracle over any closure evaluable on dual numbers.
pub struct DualOracle<F> {
    colors: u32,
    dim: usize,
    f: F,
}

impl<F> DualOracle<F>
where
    F: Fn(Color, &[MultiDual]) -> Vec<MultiDual>,
{
    pub fn new(colors: u32, dim: usize, f: F) -> DualOracle<F> {
        DualOracle { colors, dim, f }
    }
}

impl<F> DerivativeOracle for DualOracle<F>
where
    F: Fn(Color, &[MultiDual]) -> Vec<MultiDual>,
{
    fn colors(&self) -> u32 {
        self.colors
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, color: Color, y: &[f64]) -> Vec<f64> {
        let duals: Vec<MultiDual> =
            y.iter().map(|&v| MultiDual::constant(0, v)).collect();
        (self.f)(color, &duals).into_iter().map(|d| d.value()).collect()
    }

    fn deriv(&self, color: Color, y: &[f64], directions: &[Vec<f64>]) -> Vec<f64> {
        if directions.is_empty() {
            return self.eval(color, y);
        }
        let duals: Vec<MultiDual> = y
            .iter()
            .enumerate()
            .map(|(m, &v)| {
                let seeds: Vec<f64> = directions.iter().map(|d| d[m]).collect();
                MultiDual::seeded(v, &seeds)
            })
            .collect();
        (self.f)(color, &duals).into_iter().map(|d| d.mixed()).collect()
    }
}

/// Elementary differential F(τ)(y): children become direction vectors for
/// the root component's derivative tensor.
pub fn elementary_differential(
    tree: &ColoredTree,
    oracle: &dyn DerivativeOracle,
    y: &[f64],
) -> Result<Vec<f64>, NbError> {
    if tree.max_color() > oracle.colors() {
        return Err(NbError::ColorRange { color: tree.max_color(), n: oracle.colors() });
    }
    let needed = max_node_arity(tree);
    if needed > oracle.supported_derivative_order() {
        return Err(NbError::DerivativeOrder {
            needed,
            supported: oracle.supported_derivative_order(),
        });
    }
    Ok(elem_diff_inner(tree, oracle, y))
}

fn elem_diff_inner(tree: &ColoredTree, oracle: &dyn DerivativeOracle, y: &[f64]) -> Vec<f64> {
    if tree.children().is_empty() {
        return oracle.eval(tree.root_color(), y);
    }
    let dirs: Vec<Vec<f64>> = tree
        .children()
        .iter()
        .map(|c| elem_diff_inner(c, oracle, y))
        .collect();
    oracle.deriv(tree.root_color(), y, &dirs)
}

fn max_node_arity(tree: &ColoredTree) -> u32 {
    let own = tree.children().len() as u32;
    tree.children()
        .iter()
        .map(max_node_arity)
        .max()
        .unwrap_or(0)
        .max(own)
}

/// Series coefficients keyed by tree.
pub type UMap = HashMap<ColoredTree, f64>;

/// u(τ) = 1/γ(τ) on a whole set: the exact-flow coefficients.
pub fn inverse_density_weights(set: &NTreeSet) -> UMap {
    set.iter().map(|t| (t.clone(), 1.0 / t.density() as f64)).collect()
}

/// NB_k(u, y) = y + Σ_{τ ∈ NT_k} h^|τ|/σ(τ) · u(τ) · F(τ)(y).
/// `k = 0` returns `y` unchanged (coefficient one on the bare state).
pub fn nb_truncation(
    u: &UMap,
    oracle: &dyn DerivativeOracle,
    y: &[f64],
    h: f64,
    k: u32,
) -> Result<Vec<f64>, NbError> {
    let mut out = y.to_vec();
    if k == 0 {
        return Ok(out);
    }
    let set = enumerate(k, oracle.colors())?;
    for tree in set.iter() {
        let coeff = *u
            .get(tree)
            .ok_or_else(|| NbError::MissingCoefficient { tree: tree.to_string() })?;
        let weight = h.powi(tree.order() as i32) / tree.symmetry() as f64 * coeff;
        let diff = elementary_differential(tree, oracle, y)?;
        for (o, d) in out.iter_mut().zip(&diff) {
            *o += weight * d;
        }
    }
    Ok(out)
}

/// One snapshot of scheme coefficients a⁽ᵛ⁾ᵢⱼ, b⁽ᵛ⁾ⱼ at fixed (yⁿ, h).
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientProvider {
    stages: usize,
    colors: u32,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl CoefficientProvider {
    pub fn new(stages: usize, colors: u32) -> CoefficientProvider {
        CoefficientProvider {
            stages,
            colors,
            a: vec![0.0; stages * stages * colors as usize],
            b: vec![0.0; stages * colors as usize],
        }
    }

    /// Classical coefficients replicated over every color.
    pub fn constant(a: &[Vec<f64>], b: &[f64], colors: u32) -> CoefficientProvider {
        let s = b.len();
        let mut p = CoefficientProvider::new(s, colors);
        for i in 0..s {
            for j in 0..s {
                for c in 1..=colors {
                    p.set_a(i, j, Color::new(c), a[i][j]);
                }
            }
        }
        for (j, &bj) in b.iter().enumerate() {
            for c in 1..=colors {
                p.set_b(j, Color::new(c), bj);
            }
        }
        p
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn colors(&self) -> u32 {
        self.colors
    }

    pub fn a(&self, i: usize, j: usize, color: Color) -> f64 {
        self.a[(i * self.stages + j) * self.colors as usize + color.idx0()]
    }

    pub fn b(&self, j: usize, color: Color) -> f64 {
        self.b[j * self.colors as usize + color.idx0()]
    }

    pub fn set_a(&mut self, i: usize, j: usize, color: Color, v: f64) {
        self.a[(i * self.stages + j) * self.colors as usize + color.idx0()] = v;
    }

    pub fn set_b(&mut self, j: usize, color: Color, v: f64) {
        self.b[j * self.colors as usize + color.idx0()] = v;
    }

    /// Strictly lower-triangular a in every color.
    pub fn is_explicit(&self) -> bool {
        (0..self.stages).all(|i| {
            (i..self.stages).all(|j| {
                (1..=self.colors).all(|c| self.a(i, j, Color::new(c)) == 0.0)
            })
        })
    }
}

/// Elementary weights over a tree set with the per-stage caches exposed.
pub struct UCoefficients {
    coeff: CoefficientProvider,
    /// encoding → (∏_children d_i, d_i) per stage.
    memo: HashMap<Vec<u32>, (Vec<f64>, Vec<f64>)>,
    u: UMap,
}

impl UCoefficients {
    /// Evaluates u on every tree in the set.
    pub fn compute(set: &NTreeSet, coeff: &CoefficientProvider) -> UCoefficients {
        let mut uc = UCoefficients {
            coeff: coeff.clone(),
            memo: HashMap::new(),
            u: UMap::new(),
        };
        for tree in set.iter() {
            let value = uc.eval(tree);
            uc.u.insert(tree.clone(), value);
        }
        uc
    }

    pub fn u(&self, tree: &ColoredTree) -> Option<f64> {
        self.u.get(tree).copied()
    }

    pub fn map(&self) -> &UMap {
        &self.u
    }

    /// d_i(τ) = Σ_j a(i,j,color(τ)) ∏_children d_j.
    pub fn d(&mut self, stage: usize, tree: &ColoredTree) -> f64 {
        self.visit(tree).1[stage]
    }

    /// g_i⁽ᵛ⁾(τ) = δ_{ν,color(τ)} ∏_children d_i.
    pub fn g(&mut self, stage: usize, color: Color, tree: &ColoredTree) -> f64 {
        if color != tree.root_color() {
            0.0
        } else {
            self.visit(tree).0[stage]
        }
    }

    fn eval(&mut self, tree: &ColoredTree) -> f64 {
        assert!(
            tree.max_color() <= self.coeff.colors(),
            "tree color outside provider range"
        );
        let (gprod, _) = self.visit(tree);
        (0..self.coeff.stages())
            .map(|i| self.coeff.b(i, tree.root_color()) * gprod[i])
            .sum()
    }

    fn visit(&mut self, tree: &ColoredTree) -> (Vec<f64>, Vec<f64>) {
        if let Some(hit) = self.memo.get(tree.encoding()) {
            return hit.clone();
        }
        let s = self.coeff.stages();
        let child_d: Vec<Vec<f64>> =
            tree.children().iter().map(|c| self.visit(c).1).collect();
        let mut gprod = vec![1.0; s];
        for d in &child_d {
            for i in 0..s {
                gprod[i] *= d[i];
            }
        }
        let mut d = vec![0.0; s];
        let color = tree.root_color();
        for (i, slot) in d.iter_mut().enumerate() {
            *slot = (0..s).map(|j| self.coeff.a(i, j, color) * gprod[j]).sum();
        }
        self.memo.insert(tree.encoding().to_vec(), (gprod.clone(), d.clone()));
        (gprod, d)
    }
}

/// Elementary weight u(τ) of the scheme snapshot, by the g/d recursion.
pub fn nsark_u(tree: &ColoredTree, coeff: &CoefficientProvider) -> f64 {
    let mut uc = UCoefficients {
        coeff: coeff.clone(),
        memo: HashMap::new(),
        u: UMap::new(),
    };
    uc.eval(tree)
}

/// Brute-force u(τ): sum over all stage labelings of the product of the
/// root weight and one `a` factor per colored edge.
pub fn nsark_u_oracle(
    tree: &ColoredTree,
    coeff: &CoefficientProvider,
) -> Result<f64, NbError> {
    let states = (coeff.stages() as u128).pow(tree.order());
    if states > LABELING_GUARD {
        return Err(NbError::LabelingExplosion { states, limit: LABELING_GUARD });
    }
    let mut total = 0.0;
    for labeling in tree.labelings(coeff.stages()) {
        let mut term = coeff.b(labeling.root_label(), labeling.root_color());
        for edge in labeling.edges() {
            term *= coeff.a(edge.parent_label, edge.child_label, edge.color);
        }
        total += term;
    }
    Ok(total)
}
