//! Controlled ODE systems on compact state boxes.
//!
//! A [`ControlProblem`] bundles a vector field `f(y, u)`, a state-only
//! running cost `g(y)`, a finite discretization of the compact control set
//! `U`, the invariant state box, and the declared Lipschitz and growth
//! constants. Trajectories are produced by classical 4th-order one-step
//! integration on a fixed `dt` grid; control breakpoints are snapped onto
//! that grid so no integration step straddles a switch.
//!
//! The standing assumptions (Lipschitz bound, linear growth, box
//! invariance, nonexpansivity `sup_a inf_b ⟨y₁-y₂, f(y₁,a)-f(y₂,b)⟩ ≤ 0`)
//! are not proved here — they are checked by sampling, and the built-in
//! problems are chosen so the checks hold with provable margins.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynError {
    #[error("state left the inflated invariant box at t={time}")]
    InvarianceViolation { time: f64 },
    #[error("dt={dt} violates the stability guard dt*L <= 0.1 (L={lipschitz})")]
    UnstableStep { dt: f64, lipschitz: f64 },
    #[error("initial state lies outside the state box")]
    InitialStateOutsideBox,
    #[error("nonexpansivity margin {margin} positive at step {step}")]
    ShadowFailure { step: usize, margin: f64 },
    #[error("invalid dynamics input: {0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, DynError>;

/// Axis-aligned box `[lo_1, hi_1] × … × [lo_d, hi_d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl StateBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(DynError::Invalid("box bounds dimension mismatch".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(h > l)) {
            return Err(DynError::Invalid("box must have positive volume".into()));
        }
        Ok(StateBox { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Membership with the box inflated by `inflate` of its width per axis.
    pub fn contains(&self, y: &[f64], inflate: f64) -> bool {
        y.iter().enumerate().all(|(i, &v)| {
            let pad = inflate * (self.hi[i] - self.lo[i]);
            v >= self.lo[i] - pad && v <= self.hi[i] + pad
        })
    }

    pub fn diameter(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l) * (h - l))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_norm(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l.abs().max(h.abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| rng.random_range(*l..*h))
            .collect()
    }
}

type Field = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
type Cost = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A deterministic control problem: dynamics, cost, control grid, state box
/// and declared regularity constants.
#[derive(Clone)]
pub struct ControlProblem {
    pub name: String,
    field: Field,
    cost: Cost,
    /// Finite discretization of the compact control set.
    pub control_grid: Vec<Vec<f64>>,
    pub state_box: StateBox,
    /// Declared Lipschitz constant of `f` in `y` (1/time).
    pub lipschitz_l: f64,
    /// Declared growth constant: `‖f(y,u)‖ ≤ a (1 + ‖y‖)`.
    pub growth_a: f64,
}

impl std::fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlProblem")
            .field("name", &self.name)
            .field("dim", &self.state_box.dim())
            .field("controls", &self.control_grid.len())
            .finish()
    }
}

impl ControlProblem {
    pub fn new(
        name: impl Into<String>,
        field: Field,
        cost: Cost,
        control_grid: Vec<Vec<f64>>,
        state_box: StateBox,
        lipschitz_l: f64,
        growth_a: f64,
    ) -> Result<Self> {
        if control_grid.is_empty() {
            return Err(DynError::Invalid("control grid must be nonempty".into()));
        }
        Ok(ControlProblem {
            name: name.into(),
            field,
            cost,
            control_grid,
            state_box,
            lipschitz_l,
            growth_a,
        })
    }

    pub fn dim(&self) -> usize {
        self.state_box.dim()
    }

    pub fn eval_field(&self, y: &[f64], control_idx: usize, out: &mut [f64]) {
        (self.field)(y, &self.control_grid[control_idx], out);
    }

    pub fn cost(&self, y: &[f64]) -> f64 {
        (self.cost)(y)
    }

    /// Conservative drift constant for the shadow-control certificate: the
    /// greedy response freezes its choice over one step, so the squared
    /// distance can grow at most linearly in `dt` per unit time, with slope
    /// bounded through `‖f‖ ≤ M` and the declared Lipschitz constant.
    pub fn shadow_drift_bound(&self) -> f64 {
        let m = self.growth_a * (1.0 + self.state_box.max_norm());
        let d = self.state_box.diameter();
        4.0 * m * m + 4.0 * d * self.lipschitz_l * m
    }
}

/// Piecewise-constant control: `values[k]` (an index into the control grid)
/// applies on `[breakpoints[k], breakpoints[k+1])`, and the last value is
/// held forever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PureControl {
    pub breakpoints: Vec<f64>,
    pub values: Vec<usize>,
}

impl PureControl {
    pub fn constant(control_idx: usize) -> Self {
        PureControl {
            breakpoints: vec![0.0],
            values: vec![control_idx],
        }
    }

    pub fn new(breakpoints: Vec<f64>, values: Vec<usize>) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != values.len() {
            return Err(DynError::Invalid(
                "need one value per breakpoint, at least one".into(),
            ));
        }
        if breakpoints[0] != 0.0 {
            return Err(DynError::Invalid("breakpoints must start at 0".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(DynError::Invalid(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        Ok(PureControl {
            breakpoints,
            values,
        })
    }

    /// Control-grid index active at time `t`.
    pub fn value_index_at(&self, t: f64) -> usize {
        match self
            .breakpoints
            .binary_search_by(|b| b.partial_cmp(&t).unwrap())
        {
            Ok(i) => self.values[i],
            Err(0) => self.values[0],
            Err(i) => self.values[i - 1],
        }
    }

    /// The control `t ↦ u(t + offset)`, used when a policy is resumed from
    /// an intermediate state.
    pub fn tail(&self, offset: f64) -> PureControl {
        let mut breakpoints = vec![0.0];
        let mut values = vec![self.value_index_at(offset)];
        for (b, v) in self.breakpoints.iter().zip(&self.values) {
            if *b > offset {
                breakpoints.push(b - offset);
                values.push(*v);
            }
        }
        PureControl {
            breakpoints,
            values,
        }
    }

    /// Play `self` on `[0, at)`, then `next` time-shifted.
    pub fn concat(&self, next: &PureControl, at: f64) -> PureControl {
        let mut breakpoints = Vec::new();
        let mut values = Vec::new();
        for (b, v) in self.breakpoints.iter().zip(&self.values) {
            if *b < at {
                breakpoints.push(*b);
                values.push(*v);
            }
        }
        breakpoints.push(at);
        values.push(next.value_index_at(0.0));
        for (b, v) in next.breakpoints.iter().zip(&next.values) {
            if *b > 0.0 {
                breakpoints.push(b + at);
                values.push(*v);
            }
        }
        compress(breakpoints, values)
    }

    pub fn switch_count(&self) -> usize {
        self.breakpoints.len()
    }
}

/// Drop consecutive repeated values so controls stay compact.
pub(crate) fn compress(breakpoints: Vec<f64>, values: Vec<usize>) -> PureControl {
    let mut bk = Vec::with_capacity(breakpoints.len());
    let mut vv = Vec::with_capacity(values.len());
    for (b, v) in breakpoints.into_iter().zip(values) {
        if vv.last() == Some(&v) {
            continue;
        }
        bk.push(b);
        vv.push(v);
    }
    PureControl {
        breakpoints: bk,
        values: vv,
    }
}

/// Sampled solution of the controlled ODE on a uniform `dt` grid, with
/// piecewise-linear interpolation between samples. States are stored in one
/// flat buffer (row `i` holds the state at time `i * dt`).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    dim: usize,
    data: Vec<f64>,
    /// Control-grid index used on step `i`.
    pub control_indices: Vec<usize>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of samples (steps + 1).
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }

    pub fn span(&self) -> f64 {
        self.dt * (self.len() - 1) as f64
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    /// Piecewise-linear interpolation; clamped to the final state beyond
    /// the simulated horizon.
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.state_at_into(t, &mut out);
        out
    }

    pub fn state_at_into(&self, t: f64, out: &mut [f64]) {
        let n = self.len() - 1;
        if t <= 0.0 {
            out.copy_from_slice(self.state(0));
            return;
        }
        let x = t / self.dt;
        let i = x.floor() as usize;
        if i >= n {
            out.copy_from_slice(self.state(n));
            return;
        }
        let frac = x - i as f64;
        let a = self.state(i);
        let b = self.state(i + 1);
        for k in 0..self.dim {
            out[k] = a[k] + frac * (b[k] - a[k]);
        }
    }

    /// CSV rows `t, y_1, …, y_d, u_index`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "t")?;
        for k in 0..self.dim {
            write!(w, ",y{}", k + 1)?;
        }
        writeln!(w, ",u_index")?;
        for (i, y) in self.iter().enumerate() {
            write!(w, "{}", i as f64 * self.dt)?;
            for v in y {
                write!(w, ",{v}")?;
            }
            let u = if i < self.control_indices.len() {
                self.control_indices[i]
            } else {
                *self.control_indices.last().unwrap_or(&0)
            };
            writeln!(w, ",{u}")?;
        }
        Ok(())
    }
}

fn rk4_step(problem: &ControlProblem, y: &[f64], u_idx: usize, dt: f64, scratch: &mut Rk4Scratch) {
    let d = y.len();
    problem.eval_field(y, u_idx, &mut scratch.k1);
    for i in 0..d {
        scratch.tmp[i] = y[i] + 0.5 * dt * scratch.k1[i];
    }
    problem.eval_field(&scratch.tmp, u_idx, &mut scratch.k2);
    for i in 0..d {
        scratch.tmp[i] = y[i] + 0.5 * dt * scratch.k2[i];
    }
    problem.eval_field(&scratch.tmp, u_idx, &mut scratch.k3);
    for i in 0..d {
        scratch.tmp[i] = y[i] + dt * scratch.k3[i];
    }
    problem.eval_field(&scratch.tmp, u_idx, &mut scratch.k4);
    for i in 0..d {
        scratch.out[i] = y[i]
            + dt / 6.0
                * (scratch.k1[i] + 2.0 * scratch.k2[i] + 2.0 * scratch.k3[i] + scratch.k4[i]);
    }
}

struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
    out: Vec<f64>,
}

impl Rk4Scratch {
    fn new(d: usize) -> Self {
        Rk4Scratch {
            k1: vec![0.0; d],
            k2: vec![0.0; d],
            k3: vec![0.0; d],
            k4: vec![0.0; d],
            tmp: vec![0.0; d],
            out: vec![0.0; d],
        }
    }
}

fn check_step(problem: &ControlProblem, dt: f64) -> Result<()> {
    if !(dt > 0.0) {
        return Err(DynError::Invalid(format!("dt={dt} must be positive")));
    }
    if dt * problem.lipschitz_l > 0.1 + 1e-12 {
        return Err(DynError::UnstableStep {
            dt,
            lipschitz: problem.lipschitz_l,
        });
    }
    Ok(())
}

/// Integrate the controlled system from `y0` over `[0, horizon]`.
///
/// Control breakpoints are snapped to the `dt` grid by sampling the control
/// at step midpoints, so every integration step sees one constant control
/// point. The state must stay inside the box inflated by 1%.
pub fn simulate(
    problem: &ControlProblem,
    control: &PureControl,
    y0: &[f64],
    horizon: f64,
    dt: f64,
) -> Result<Trajectory> {
    check_step(problem, dt)?;
    if !problem.state_box.contains(y0, 0.0) {
        return Err(DynError::InitialStateOutsideBox);
    }
    let steps = (horizon / dt - 1e-9).ceil().max(0.0) as usize;
    let d = problem.dim();
    let mut data = Vec::with_capacity((steps + 1) * d);
    let mut control_indices = Vec::with_capacity(steps);
    data.extend_from_slice(y0);
    let mut scratch = Rk4Scratch::new(d);
    let mut y = y0.to_vec();
    for i in 0..steps {
        let u_idx = control.value_index_at((i as f64 + 0.5) * dt);
        rk4_step(problem, &y, u_idx, dt, &mut scratch);
        y.copy_from_slice(&scratch.out);
        if !problem.state_box.contains(&y, 0.01) {
            return Err(DynError::InvarianceViolation {
                time: (i + 1) as f64 * dt,
            });
        }
        control_indices.push(u_idx);
        data.extend_from_slice(&y);
    }
    Ok(Trajectory {
        dt,
        dim: d,
        data,
        control_indices,
    })
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Report of the sampled Lipschitz / growth checks.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub max_lipschitz_quotient: f64,
    pub lipschitz_ok: bool,
    pub lipschitz_witness: Option<(Vec<f64>, Vec<f64>, usize)>,
    pub max_growth_quotient: f64,
    pub growth_ok: bool,
    pub samples: usize,
}

impl AssumptionReport {
    pub fn pass(&self) -> bool {
        self.lipschitz_ok && self.growth_ok
    }
}

/// Sample state pairs and controls, reporting the worst observed Lipschitz
/// and growth quotients against the declared constants. Deterministic for a
/// given seed.
pub fn check_assumptions(
    problem: &ControlProblem,
    sample_count: usize,
    rng_seed: u64,
) -> AssumptionReport {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let d = problem.dim();
    let mut f1 = vec![0.0; d];
    let mut f2 = vec![0.0; d];
    let mut max_lip = 0.0_f64;
    let mut max_growth = 0.0_f64;
    let mut witness = None;
    for _ in 0..sample_count.max(1) {
        let y1 = problem.state_box.sample(&mut rng);
        let y2 = problem.state_box.sample(&mut rng);
        let u = rng.random_range(0..problem.control_grid.len());
        problem.eval_field(&y1, u, &mut f1);
        problem.eval_field(&y2, u, &mut f2);
        let dy = norm(&sub(&y1, &y2));
        if dy > 1e-12 {
            let q = norm(&sub(&f1, &f2)) / dy;
            if q > max_lip {
                max_lip = q;
                witness = Some((y1.clone(), y2.clone(), u));
            }
        }
        let g = norm(&f1) / (1.0 + norm(&y1));
        max_growth = max_growth.max(g);
    }
    let lip_ok = max_lip <= problem.lipschitz_l * (1.0 + 1e-9) + 1e-12;
    AssumptionReport {
        max_lipschitz_quotient: max_lip,
        lipschitz_ok: lip_ok,
        lipschitz_witness: if lip_ok { None } else { witness },
        max_growth_quotient: max_growth,
        growth_ok: max_growth <= problem.growth_a * (1.0 + 1e-9) + 1e-12,
        samples: sample_count,
    }
}

/// Report of the sampled nonexpansivity check.
#[derive(Debug, Clone, Serialize)]
pub struct NonexpansiveReport {
    /// `max over samples and a of min over b of ⟨y₁-y₂, f(y₁,a)-f(y₂,b)⟩`.
    pub worst_margin: f64,
    pub pass: bool,
    pub tolerance: f64,
    pub witness: Option<(Vec<f64>, Vec<f64>, usize)>,
    pub samples: usize,
}

/// Check `sup_a inf_b ⟨y₁-y₂, f(y₁,a)-f(y₂,b)⟩ ≤ 0` on sampled state pairs,
/// with the sup/inf taken over the finite control grid. `grid_slack` widens
/// the pass tolerance to account for the control-grid resolution.
pub fn check_nonexpansive(
    problem: &ControlProblem,
    sample_count: usize,
    rng_seed: u64,
    grid_slack: f64,
) -> NonexpansiveReport {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let d = problem.dim();
    let mut fa = vec![0.0; d];
    let mut fb = vec![0.0; d];
    let mut worst = f64::NEG_INFINITY;
    let mut witness = None;
    for _ in 0..sample_count.max(1) {
        let y1 = problem.state_box.sample(&mut rng);
        let y2 = problem.state_box.sample(&mut rng);
        let dy = sub(&y1, &y2);
        for a in 0..problem.control_grid.len() {
            problem.eval_field(&y1, a, &mut fa);
            let mut best = f64::INFINITY;
            for b in 0..problem.control_grid.len() {
                problem.eval_field(&y2, b, &mut fb);
                best = best.min(dot(&dy, &sub(&fa, &fb)));
            }
            if best > worst {
                worst = best;
                witness = Some((y1.clone(), y2.clone(), a));
            }
        }
    }
    let tolerance = 1e-9 + grid_slack;
    let pass = worst <= tolerance;
    NonexpansiveReport {
        worst_margin: worst,
        pass,
        tolerance,
        witness: if pass { None } else { witness },
        samples: sample_count,
    }
}

/// Result of the greedy shadowing construction.
#[derive(Debug, Clone)]
pub struct ShadowResult {
    pub control: PureControl,
    pub trajectory: Trajectory,
    pub initial_distance: f64,
    pub max_distance: f64,
    /// Observed drift normalized by `dt * horizon`; the a-priori constant is
    /// [`ControlProblem::shadow_drift_bound`].
    pub observed_drift: f64,
}

/// Greedy realization of the nonexpansive response: while the reference
/// trajectory plays `u` from `y1`, pick at every step the grid control `b`
/// minimizing `⟨y₁(t)-y₂(t), f(y₁(t),a)-f(y₂(t),b)⟩` and integrate both
/// states in lockstep. Keeps `‖y₁(t)-y₂(t)‖ ≤ ‖y₁-y₂‖ + C·dt·horizon`.
pub fn shadow_control(
    problem: &ControlProblem,
    reference: &PureControl,
    y1: &[f64],
    y2: &[f64],
    horizon: f64,
    dt: f64,
) -> Result<ShadowResult> {
    check_step(problem, dt)?;
    if !problem.state_box.contains(y1, 0.0) || !problem.state_box.contains(y2, 0.0) {
        return Err(DynError::InitialStateOutsideBox);
    }
    let steps = (horizon / dt - 1e-9).ceil().max(0.0) as usize;
    let d = problem.dim();
    let mut a_state = y1.to_vec();
    let mut b_state = y2.to_vec();
    let mut fa = vec![0.0; d];
    let mut fb = vec![0.0; d];
    let mut scratch = Rk4Scratch::new(d);
    let mut data = Vec::with_capacity((steps + 1) * d);
    let mut picked = Vec::with_capacity(steps);
    data.extend_from_slice(&b_state);
    let initial_distance = norm(&sub(y1, y2));
    let mut max_distance = initial_distance;
    for i in 0..steps {
        let a_idx = reference.value_index_at((i as f64 + 0.5) * dt);
        problem.eval_field(&a_state, a_idx, &mut fa);
        let dy = sub(&a_state, &b_state);
        let mut best_b = 0;
        let mut best_val = f64::INFINITY;
        for b in 0..problem.control_grid.len() {
            problem.eval_field(&b_state, b, &mut fb);
            let v = dot(&dy, &sub(&fa, &fb));
            if v < best_val {
                best_val = v;
                best_b = b;
            }
        }
        let dist2 = dot(&dy, &dy);
        if best_val > 1e-9 * (1.0 + dist2) {
            return Err(DynError::ShadowFailure {
                step: i,
                margin: best_val,
            });
        }
        rk4_step(problem, &a_state, a_idx, dt, &mut scratch);
        a_state.copy_from_slice(&scratch.out);
        rk4_step(problem, &b_state, best_b, dt, &mut scratch);
        b_state.copy_from_slice(&scratch.out);
        if !problem.state_box.contains(&b_state, 0.01) {
            return Err(DynError::InvarianceViolation {
                time: (i + 1) as f64 * dt,
            });
        }
        picked.push(best_b);
        data.extend_from_slice(&b_state);
        max_distance = max_distance.max(norm(&sub(&a_state, &b_state)));
    }
    let breakpoints: Vec<f64> = (0..picked.len()).map(|i| i as f64 * dt).collect();
    let control = if picked.is_empty() {
        PureControl::constant(0)
    } else {
        compress(breakpoints, picked.clone())
    };
    let denom = (dt * horizon).max(f64::MIN_POSITIVE);
    Ok(ShadowResult {
        control,
        trajectory: Trajectory {
            dt,
            dim: d,
            data,
            control_indices: picked,
        },
        initial_distance,
        max_distance,
        observed_drift: ((max_distance - initial_distance).max(0.0)) / denom,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems;
    use approx::assert_abs_diff_eq;

    #[test]
    fn control_lookup_and_tail() {
        let u = PureControl::new(vec![0.0, 1.0, 2.5], vec![3, 1, 4]).unwrap();
        assert_eq!(u.value_index_at(0.0), 3);
        assert_eq!(u.value_index_at(0.99), 3);
        assert_eq!(u.value_index_at(1.0), 1);
        assert_eq!(u.value_index_at(7.0), 4);
        let tail = u.tail(1.2);
        assert_eq!(tail.value_index_at(0.0), 1);
        assert_eq!(tail.value_index_at(1.5), 4);
        assert!(PureControl::new(vec![0.5], vec![0]).is_err());
        assert!(PureControl::new(vec![0.0, 0.0], vec![0, 1]).is_err());
    }

    #[test]
    fn toy_constant_when_control_zero() {
        let p = problems::toy_pollution();
        let zero = PureControl::constant(0);
        let traj = simulate(&p, &zero, &[0.3, 0.7], 5.0, 0.01).unwrap();
        for y in &traj.states {
            assert_abs_diff_eq!(y[0], 0.3, epsilon = 1e-12);
            assert_abs_diff_eq!(y[1], 0.7, epsilon = 1e-12);
        }
    }

    #[test]
    fn toy_full_throttle_matches_closed_form() {
        let p = problems::toy_pollution();
        let one = PureControl::constant(p.control_grid.len() - 1);
        let traj = simulate(&p, &one, &[0.0, 0.0], 10.0, 1e-3).unwrap();
        let mut worst = 0.0_f64;
        for (i, y) in traj.states.iter().enumerate() {
            let t = i as f64 * 1e-3;
            let x1 = 2.0 * (1.0 - (-t).exp());
            let x2 = 1.0 - (-t).exp();
            worst = worst.max((y[0] - x1).abs().max((y[1] - x2).abs()));
        }
        assert!(worst <= 1e-6, "max error {worst}");
    }

    #[test]
    fn rotator_conserves_radius() {
        let p = problems::rotator();
        let u = PureControl::constant(0);
        let traj = simulate(&p, &u, &[1.0, 0.0], 100.0, 1e-3).unwrap();
        for y in traj.states.iter().step_by(1000) {
            assert_abs_diff_eq!(norm(y), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn step_halving_is_fourth_order() {
        let p = problems::rotator();
        let u = PureControl::constant(0);
        let exact = [(10.0_f64).cos(), (10.0_f64).sin()];
        let coarse = simulate(&p, &u, &[1.0, 0.0], 10.0, 0.02).unwrap();
        let fine = simulate(&p, &u, &[1.0, 0.0], 10.0, 0.01).unwrap();
        let e_coarse = norm(&sub(coarse.final_state(), &exact));
        let e_fine = norm(&sub(fine.final_state(), &exact));
        let ratio = e_coarse / e_fine.max(1e-300);
        assert!(
            ratio > 8.0 && ratio < 32.0,
            "expected ~16x error drop, got {ratio} ({e_coarse} / {e_fine})"
        );
    }

    #[test]
    fn invariance_guard_fires() {
        let p = problems::expanding_line();
        let u = PureControl::constant(0);
        let err = simulate(&p, &u, &[1.5, 0.0], 50.0, 0.01).unwrap_err();
        assert!(matches!(err, DynError::InvarianceViolation { .. }));
    }

    #[test]
    fn stability_guard_fires() {
        let p = problems::toy_pollution();
        let u = PureControl::constant(0);
        let err = simulate(&p, &u, &[0.0, 0.0], 1.0, 0.2).unwrap_err();
        assert!(matches!(err, DynError::UnstableStep { .. }));
    }

    #[test]
    fn assumption_checks() {
        let toy = problems::toy_pollution();
        let report = check_assumptions(&toy, 500, 42);
        assert!(report.pass(), "{report:?}");

        // f(y) = y^2 on [0, 2] has Lipschitz quotient up to 4.
        let bad = ControlProblem::new(
            "square",
            Arc::new(|y: &[f64], _u: &[f64], out: &mut [f64]| {
                out[0] = y[0] * y[0];
            }),
            Arc::new(|_y: &[f64]| 0.0),
            vec![vec![0.0]],
            StateBox::new(vec![0.0], vec![2.0]).unwrap(),
            1.0,
            3.0,
        )
        .unwrap();
        let report = check_assumptions(&bad, 500, 42);
        assert!(!report.lipschitz_ok);
        assert!(report.lipschitz_witness.is_some());
        assert!(report.max_lipschitz_quotient > 1.0);

        let zero = ControlProblem::new(
            "zero",
            Arc::new(|_y: &[f64], _u: &[f64], out: &mut [f64]| out.fill(0.0)),
            Arc::new(|_y: &[f64]| 0.0),
            vec![vec![0.0]],
            StateBox::new(vec![0.0], vec![1.0]).unwrap(),
            0.0,
            1.0,
        )
        .unwrap();
        assert!(check_assumptions(&zero, 100, 1).pass());
    }

    #[test]
    fn nonexpansivity_checks() {
        let toy = problems::toy_pollution();
        let r = check_nonexpansive(&toy, 300, 7, 0.0);
        assert!(r.pass, "margin {}", r.worst_margin);
        assert!(r.worst_margin <= 1e-9);

        let rot = problems::rotator();
        let r = check_nonexpansive(&rot, 300, 7, 0.0);
        assert!(r.pass);
        assert!(r.worst_margin.abs() <= 1e-9);

        let exp = problems::expanding_line();
        let r = check_nonexpansive(&exp, 300, 7, 0.0);
        assert!(!r.pass);
        assert!(r.worst_margin > 0.0);
        assert!(r.witness.is_some());
    }

    #[test]
    fn shadow_keeps_distance() {
        let toy = problems::toy_pollution();
        let one = PureControl::constant(toy.control_grid.len() - 1);
        let res = shadow_control(&toy, &one, &[0.0, 0.0], &[0.2, 0.1], 5.0, 0.01).unwrap();
        assert!(res.max_distance <= res.initial_distance + 1e-9);

        // Identical starts stay identical.
        let res = shadow_control(&toy, &one, &[0.1, 0.2], &[0.1, 0.2], 5.0, 0.01).unwrap();
        assert!(res.max_distance <= 1e-12);

        // Isometric flow keeps the distance constant.
        let rot = problems::rotator();
        let u = PureControl::constant(0);
        let res = shadow_control(&rot, &u, &[1.0, 0.0], &[0.0, 0.5], 20.0, 0.01).unwrap();
        assert_abs_diff_eq!(res.max_distance, res.initial_distance, epsilon = 1e-6);
    }

    #[test]
    fn trajectory_interpolation_and_csv() {
        let p = problems::toy_pollution();
        let one = PureControl::constant(p.control_grid.len() - 1);
        let traj = simulate(&p, &one, &[0.0, 0.0], 1.0, 0.1).unwrap();
        let mid = traj.state_at(0.05);
        assert!(mid[1] > 0.0 && mid[1] < traj.states[1][1]);
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,y1,y2,u_index\n"));
        assert_eq!(text.lines().count(), traj.states.len() + 1);
    }
}
