//! Long-run optimal control toolkit.
//!
//! The crate is organized around five pillars:
//!
//! - [`evaluations`] — probability measures on the half-line ("evaluations")
//!   weighting a running cost over time: Cesàro and Abel families, atoms,
//!   piecewise densities and mixtures, with shift total variation and
//!   moving-average smoothing.
//! - [`dynamics`] — controlled ODE systems on compact invariant boxes,
//!   fixed-step 4th-order integration, and numerical verification of the
//!   Lipschitz / growth / nonexpansivity assumptions.
//! - [`payoff`] — θ-evaluated payoffs, value optimization over
//!   piecewise-constant controls, limit values via Cesàro/Abel
//!   cross-validation, undiscounted and weighted-average criteria.
//! - [`random_controls`] — finite mixtures of control policies,
//!   distribution-valued trajectories, exact Kantorovich-Rubinstein
//!   transport between particle clouds, concatenation and limit controls.
//! - [`synthesis`] — construction of a single random control that is
//!   ε-optimal simultaneously for every sufficiently regular evaluation,
//!   together with a machine-checkable robustness certificate.

pub mod dynamics;
pub mod evaluations;
pub mod payoff;
pub mod problems;
pub mod quad;
pub mod random_controls;
pub mod synthesis;

pub use evaluations::Evaluation;
