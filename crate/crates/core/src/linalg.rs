//! Small dense linear solves in compensated (double-double) arithmetic.
//!
//! The Patankar stage systems are tiny (N ≤ 16) but their entries scale
//! like `h · rate / weight`, which at extreme step sizes reaches 1e4 and
//! beyond. Mass conservation of the exact stage solution then hides behind
//! catastrophic cancellation, and plain f64 elimination leaves a residual
//! of order `eps · ‖A‖` that shows up directly as mass drift. Carrying the
//! matrix build and the elimination in double-double keeps the computed
//! solution within one f64 rounding of the true one, so conservation and
//! trace replay hold to near machine precision at every step size.

use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

/// Pivots with magnitude below this are treated as structurally zero.
pub const PIVOT_FLOOR: f64 = 1e-300;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("singular matrix: pivot {pivot:e} below {floor:e} at column {col}")]
    Singular { col: usize, pivot: f64, floor: f64 },
    #[error("matrix is {rows}x{cols} but the right-hand side has length {rhs}")]
    ShapeMismatch { rows: usize, cols: usize, rhs: usize },
}

/// Unevaluated sum of two doubles with |lo| ≤ ulp(hi)/2, giving ~31 decimal
/// digits. Enough to make 1e4-scale cancellations exact at f64 resolution.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dd {
    hi: f64,
    lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let v = s - a;
    let e = (a - (s - v)) + (b - v);
    (s, e)
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    // Requires |a| >= |b|.
    let s = a + b;
    let e = b - (s - a);
    (s, e)
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let e = a.mul_add(b, -p);
    (p, e)
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn new(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    /// Exact product of two doubles.
    pub fn prod(a: f64, b: f64) -> Dd {
        let (p, e) = two_prod(a, b);
        Dd { hi: p, lo: e }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn abs(self) -> Dd {
        if self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0) {
            -self
        } else {
            self
        }
    }

    pub fn recip(self) -> Dd {
        Dd::ONE / self
    }
}

impl From<f64> for Dd {
    fn from(x: f64) -> Dd {
        Dd::new(x)
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let lo = e + self.lo + o.lo;
        let (hi, lo) = quick_two_sum(s, lo);
        Dd { hi, lo }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let lo = e + self.hi * o.lo + self.lo * o.hi;
        let (hi, lo) = quick_two_sum(p, lo);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        // Two Newton-style correction terms on the f64 quotient.
        let q1 = self.hi / o.hi;
        let r1 = self - o * Dd::new(q1);
        let q2 = r1.hi / o.hi;
        let r2 = r1 - o * Dd::new(q2);
        let q3 = r2.hi / o.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::new(q3)
    }
}

impl Add<f64> for Dd {
    type Output = Dd;
    fn add(self, o: f64) -> Dd {
        self + Dd::new(o)
    }
}

impl Mul<f64> for Dd {
    type Output = Dd;
    fn mul(self, o: f64) -> Dd {
        self * Dd::new(o)
    }
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting, entirely
/// in double-double. `a` is row-major and consumed.
pub fn solve_dd(mut a: Vec<Vec<Dd>>, mut b: Vec<Dd>) -> Result<Vec<Dd>, LinalgError> {
    let n = a.len();
    if b.len() != n || a.iter().any(|row| row.len() != n) {
        return Err(LinalgError::ShapeMismatch {
            rows: n,
            cols: a.first().map_or(0, Vec::len),
            rhs: b.len(),
        });
    }

    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r, &s| {
                a[r][col].abs().hi.partial_cmp(&a[s][col].abs().hi).unwrap()
            })
            .unwrap();
        let pivot = a[pivot_row][col];
        if pivot.abs().hi < PIVOT_FLOOR {
            return Err(LinalgError::Singular {
                col,
                pivot: pivot.to_f64(),
                floor: PIVOT_FLOOR,
            });
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);

        for row in col + 1..n {
            let factor = a[row][col] / pivot;
            a[row][col] = Dd::ZERO;
            for k in col + 1..n {
                a[row][k] = a[row][k] - factor * a[col][k];
            }
            b[row] = b[row] - factor * b[col];
        }
    }

    let mut x = vec![Dd::ZERO; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc = acc - a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

/// f64 convenience wrapper around [`solve_dd`].
pub fn solve(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let add: Vec<Vec<Dd>> = a
        .iter()
        .map(|row| row.iter().map(|&x| Dd::new(x)).collect())
        .collect();
    let bdd: Vec<Dd> = b.iter().map(|&x| Dd::new(x)).collect();
    Ok(solve_dd(add, bdd)?.into_iter().map(Dd::to_f64).collect())
}

/// Neumaier-compensated sum; error stays O(eps·|Σ|) even when big terms
/// cancel to a small result.
pub fn compensated_sum(terms: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &t in terms {
        let s = sum + t;
        if sum.abs() >= t.abs() {
            comp += (sum - s) + t;
        } else {
            comp += (t - s) + sum;
        }
        sum = s;
    }
    sum + comp
}
