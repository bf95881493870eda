//! Colored rooted trees, NB-series, and order-condition machinery for
//! Runge-Kutta-like methods whose coefficients depend on the solution.
//!
//! Modified Patankar (MPRK) and GeCo integrators keep positivity and
//! conservation by scaling stage weights with solution-dependent factors.
//! Once a step is taken, those factors freeze into an additive Runge-Kutta
//! tableau with one coefficient set per additive component, and the usual
//! order theory applies tree by tree. This crate provides the pieces needed
//! to do that bookkeeping numerically:
//!
//! - [`trees`]: colored rooted trees, canonical enumeration, symmetry and
//!   density coefficients, node labelings.
//! - [`nbseries`]: elementary differentials, truncated NB-series, and the
//!   elementary-weight recursion for non-standard additive schemes.
//! - [`pds`]: production-destruction systems, their additive splitting, and
//!   reference solutions.
//! - [`solvers`]: Butcher tableaus, MPRK and GeCo steppers, step traces that
//!   expose the realized coefficients.
//! - [`orderlab`]: residual grids, slope fits, condition checkers, and the
//!   randomized reduced-vs-full condition spot check.

pub mod linalg;
pub mod nbseries;
pub mod orderlab;
pub mod par;
pub mod pds;
pub mod solvers;
pub mod trees;
