//! Built-in control problems.
//!
//! Two problems ship with the library:
//!
//! - `toy_pollution` — planar system `x₁' = u(A - x₁)`, `x₂' = u(B - x₂)`
//!   on `[0, A] × [0, B]` with `u ∈ [0, 1]` and cost `c(x₂) - π(x₁)`
//!   (defaults `π ≡ 0`, `c(x₂) = (x₂ - 1/2)²`). Taking `b = a` in the
//!   nonexpansivity pairing gives `⟨Δ, f(y₁,u) - f(y₂,u)⟩ = -u‖Δ‖² ≤ 0`.
//! - `rotator` — the isometric field `f(y) = (-y₂, y₁)` with cost `y₁²`.
//!   The control is irrelevant, the flow preserves distances exactly, and
//!   the long-run value depends on the initial state (orbit average of
//!   `cos²` scales with the squared radius), which makes it a good probe
//!   for state-dependent limit values.
//!
//! `expanding_line` deliberately violates both invariance and
//! nonexpansivity; it exists so the checkers have something to reject.

use serde::Deserialize;
use std::sync::Arc;

use crate::dynamics::{check_assumptions, check_nonexpansive, ControlProblem, DynError, StateBox};

/// `u ∈ [0,1]` discretized with `points` grid values.
fn unit_interval_grid(points: usize) -> Vec<Vec<f64>> {
    let n = points.max(2);
    (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect()
}

/// The planar development/pollution problem with custom cost terms.
pub fn toy_pollution_custom(
    a: f64,
    b: f64,
    control_points: usize,
    pollution_cost: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    development_benefit: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
) -> ControlProblem {
    let field = Arc::new(move |y: &[f64], u: &[f64], out: &mut [f64]| {
        out[0] = u[0] * (a - y[0]);
        out[1] = u[0] * (b - y[1]);
    });
    let cost = Arc::new(move |y: &[f64]| pollution_cost(y[1]) - development_benefit(y[0]));
    ControlProblem::new(
        "toy_pollution",
        field,
        cost,
        unit_interval_grid(control_points),
        StateBox::new(vec![0.0, 0.0], vec![a, b]).unwrap(),
        1.0,
        (a * a + b * b).sqrt(),
    )
    .unwrap()
}

/// Default toy problem: `A = 2`, `B = 1`, `π ≡ 0`, `c(x₂) = (x₂ - 1/2)²`.
pub fn toy_pollution() -> ControlProblem {
    toy_pollution_custom(
        2.0,
        1.0,
        11,
        Arc::new(|x2| (x2 - 0.5) * (x2 - 0.5)),
        Arc::new(|_| 0.0),
    )
}

/// Isometric rotation field with cost `y₁²`.
pub fn rotator() -> ControlProblem {
    let field = Arc::new(|y: &[f64], _u: &[f64], out: &mut [f64]| {
        out[0] = -y[1];
        out[1] = y[0];
    });
    let cost = Arc::new(|y: &[f64]| y[0] * y[0]);
    ControlProblem::new(
        "rotator",
        field,
        cost,
        vec![vec![0.0]],
        StateBox::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap(),
        1.0,
        1.0,
    )
    .unwrap()
}

/// `y' = y`: expanding, not invariant, not nonexpansive. Used to exercise
/// the failure paths of the assumption checkers.
pub fn expanding_line() -> ControlProblem {
    let field = Arc::new(|y: &[f64], _u: &[f64], out: &mut [f64]| {
        out[0] = y[0];
        out[1] = y[1];
    });
    let cost = Arc::new(|y: &[f64]| y[0]);
    ControlProblem::new(
        "expanding_line",
        field,
        cost,
        vec![vec![0.0]],
        StateBox::new(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap(),
        1.0,
        1.0,
    )
    .unwrap()
}

#[derive(Debug, Deserialize)]
struct ProblemSpec {
    name: String,
    #[serde(default)]
    a: Option<f64>,
    #[serde(default)]
    b: Option<f64>,
    #[serde(default)]
    control_points: Option<usize>,
}

/// Resolve a registered problem by name, verifying the standing assumptions
/// on a small sample before handing it out.
pub fn registered(name: &str) -> Result<ControlProblem, DynError> {
    let problem = match name {
        "toy_pollution" => toy_pollution(),
        "rotator" => rotator(),
        other => {
            return Err(DynError::Invalid(format!(
                "unknown problem '{other}' (registered: toy_pollution, rotator)"
            )))
        }
    };
    let assumptions = check_assumptions(&problem, 64, 0x5eed);
    if !assumptions.pass() {
        return Err(DynError::Invalid(format!(
            "{name} failed assumption checks: {assumptions:?}"
        )));
    }
    let nonexp = check_nonexpansive(&problem, 64, 0x5eed, 0.0);
    if !nonexp.pass {
        return Err(DynError::Invalid(format!(
            "{name} failed the nonexpansivity check: margin {}",
            nonexp.worst_margin
        )));
    }
    Ok(problem)
}

/// Load a problem from a JSON spec like
/// `{"name": "toy_pollution", "a": 2.0, "b": 1.0, "control_points": 11}`.
pub fn from_json(json: &str) -> Result<ControlProblem, DynError> {
    let spec: ProblemSpec = serde_json::from_str(json)
        .map_err(|e| DynError::Invalid(format!("bad problem JSON: {e}")))?;
    match spec.name.as_str() {
        "toy_pollution" => {
            if spec.a.is_some() || spec.b.is_some() || spec.control_points.is_some() {
                Ok(toy_pollution_custom(
                    spec.a.unwrap_or(2.0),
                    spec.b.unwrap_or(1.0),
                    spec.control_points.unwrap_or(11),
                    Arc::new(|x2| (x2 - 0.5) * (x2 - 0.5)),
                    Arc::new(|_| 0.0),
                ))
            } else {
                registered("toy_pollution")
            }
        }
        _ => registered(&spec.name),
    }
}
