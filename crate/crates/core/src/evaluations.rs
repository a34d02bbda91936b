//! Probability measures on the half-line used to weight running costs.
//!
//! An [`Evaluation`] is a probability measure θ on `[0, ∞)`. The closed
//! catalog of representable measures covers everything the long-run theory
//! manipulates:
//!
//! - `Cesaro { horizon: t }` — uniform density `1/t` on `[0, t]`,
//! - `Abel { discount: ρ }` — exponential density `ρ e^{-ρs}`,
//! - `Atomic` — finitely many atoms,
//! - `Piecewise` — piecewise-constant density with bounded support,
//! - `Mixture` — convex combination of the above.
//!
//! The regularity of an evaluation is measured by its shift total variation
//! `TV_s(θ) = max_Q |θ(Q) - θ(Q + s)|` over Borel sets `Q`. For measures
//! with a density this maximum is attained at `Q = {t : f(t) > f(t+s)}`,
//! so `TV_s = ∫ (f(t) - f(t+s))⁺ dt`: shifting to the right can only lose
//! mass off the half-line, never gain it, which makes the one-sided
//! positive part the exact value rather than a bound.

use serde::{Deserialize, Serialize};
use std::cell::Cell;
use std::fmt;
use thiserror::Error;

use crate::quad;

/// Mass-balance tolerance for constructors and mixture coefficients.
pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("evaluation has no density (atomic mass present)")]
    NoDensity,
    #[error("integrand produced a non-finite value")]
    InvalidIntegrand,
    #[error("mixture coefficients sum to {sum}, expected 1")]
    InvalidMixture { sum: f64 },
    #[error("smoothing window must be positive, got {0}")]
    InvalidWindow(f64),
    #[error("invalid evaluation: {0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, EvalError>;

/// A single atom of an atomic evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub time: f64,
    pub weight: f64,
}

/// One component of a mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub coefficient: f64,
    pub evaluation: Evaluation,
}

/// A probability measure on `[0, ∞)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evaluation {
    /// Uniform density `1/t` on `[0, t]`.
    Cesaro { horizon: f64 },
    /// Exponential density `ρ e^{-ρs}` with `ρ ∈ (0, 1]`.
    Abel { discount: f64 },
    /// Finitely many point masses.
    Atomic { atoms: Vec<Atom> },
    /// Piecewise-constant density: `densities[k]` on
    /// `[breakpoints[k], breakpoints[k+1])`.
    Piecewise {
        breakpoints: Vec<f64>,
        densities: Vec<f64>,
    },
    /// Convex combination of evaluations.
    Mixture { components: Vec<Component> },
}

/// Quadrature options for [`Evaluation::integrate_cfg`].
#[derive(Debug, Clone, Copy)]
pub struct QuadConfig {
    /// Absolute tolerance of the adaptive quadrature.
    pub tol: f64,
    /// Unbounded (Abel) supports are truncated where the remaining tail
    /// mass falls below this value; the tail contributes to the reported
    /// error bound, not to the integral.
    pub tail_mass: f64,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig {
            tol: 1e-8,
            tail_mass: 1e-10,
        }
    }
}

/// An integral value together with an a-priori error bound.
#[derive(Debug, Clone, Copy)]
pub struct IntegralEstimate {
    pub value: f64,
    pub error_bound: f64,
}

/// Flattened view of an evaluation: density leaves with multiplied mixture
/// coefficients, plus merged atoms.
struct Flat {
    leaves: Vec<(f64, Leaf)>,
    atoms: Vec<(f64, f64)>, // (time, weight)
}

#[derive(Clone)]
enum Leaf {
    Cesaro(f64),
    Abel(f64),
    Pieces(Vec<f64>, Vec<f64>),
}

impl Leaf {
    fn density(&self, s: f64) -> f64 {
        if s < 0.0 {
            return 0.0;
        }
        match self {
            Leaf::Cesaro(t) => {
                if s <= *t {
                    1.0 / t
                } else {
                    0.0
                }
            }
            Leaf::Abel(rho) => rho * (-rho * s).exp(),
            Leaf::Pieces(breaks, dens) => {
                if s < breaks[0] || s > breaks[breaks.len() - 1] {
                    return 0.0;
                }
                let idx = match breaks.binary_search_by(|b| b.partial_cmp(&s).unwrap()) {
                    Ok(i) => i.min(dens.len() - 1),
                    Err(i) => i - 1,
                };
                dens[idx.min(dens.len() - 1)]
            }
        }
    }

    /// Breakpoints where the density may jump.
    fn breakpoints(&self, out: &mut Vec<f64>) {
        match self {
            Leaf::Cesaro(t) => {
                out.push(0.0);
                out.push(*t);
            }
            Leaf::Abel(_) => out.push(0.0),
            Leaf::Pieces(breaks, _) => out.extend_from_slice(breaks),
        }
    }

    fn is_piecewise_constant(&self) -> bool {
        !matches!(self, Leaf::Abel(_))
    }

    fn support_bound(&self, tail: f64) -> f64 {
        match self {
            Leaf::Cesaro(t) => *t,
            Leaf::Abel(rho) => -(tail.max(f64::MIN_POSITIVE)).ln() / rho,
            Leaf::Pieces(breaks, _) => breaks[breaks.len() - 1],
        }
    }
}

impl Flat {
    fn density(&self, s: f64) -> f64 {
        self.leaves.iter().map(|(c, l)| c * l.density(s)).sum()
    }

    fn density_mass(&self) -> f64 {
        self.leaves.iter().map(|(c, _)| c).sum()
    }
}

impl Evaluation {
    pub fn cesaro(horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(EvalError::Invalid(format!(
                "Cesaro horizon must be positive and finite, got {horizon}"
            )));
        }
        Ok(Evaluation::Cesaro { horizon })
    }

    pub fn abel(discount: f64) -> Result<Self> {
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(EvalError::Invalid(format!(
                "Abel discount must lie in (0, 1], got {discount}"
            )));
        }
        Ok(Evaluation::Abel { discount })
    }

    pub fn dirac(time: f64) -> Result<Self> {
        Evaluation::atomic(vec![(time, 1.0)])
    }

    pub fn atomic(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(EvalError::Invalid("atomic evaluation needs atoms".into()));
        }
        let mut sum = 0.0;
        for &(t, w) in &atoms {
            if !(t >= 0.0) || !t.is_finite() {
                return Err(EvalError::Invalid(format!("atom time {t} out of range")));
            }
            if !(w > 0.0) {
                return Err(EvalError::Invalid(format!("atom weight {w} not positive")));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > MASS_TOL {
            return Err(EvalError::Invalid(format!(
                "atomic weights sum to {sum}, expected 1"
            )));
        }
        let mut atoms: Vec<Atom> = atoms
            .into_iter()
            .map(|(time, weight)| Atom { time, weight })
            .collect();
        atoms.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
        Ok(Evaluation::Atomic { atoms })
    }

    pub fn piecewise(breakpoints: Vec<f64>, densities: Vec<f64>) -> Result<Self> {
        if breakpoints.len() != densities.len() + 1 || densities.is_empty() {
            return Err(EvalError::Invalid(
                "piecewise needs n+1 breakpoints for n cells".into(),
            ));
        }
        if !breakpoints[0].is_finite() || breakpoints[0] < 0.0 {
            return Err(EvalError::Invalid("support must start at a finite time ≥ 0".into()));
        }
        let mut mass = 0.0;
        for (k, w) in breakpoints.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(EvalError::Invalid("breakpoints must be strictly increasing".into()));
            }
            if !(densities[k] >= 0.0) {
                return Err(EvalError::Invalid(format!(
                    "density {} is negative",
                    densities[k]
                )));
            }
            mass += densities[k] * (w[1] - w[0]);
        }
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(EvalError::Invalid(format!(
                "piecewise density mass is {mass}, expected 1"
            )));
        }
        Ok(Evaluation::Piecewise {
            breakpoints,
            densities,
        })
    }

    /// Convex combination of evaluations. Coefficients must be nonnegative
    /// and sum to 1 within [`MASS_TOL`].
    pub fn mix(pairs: Vec<(f64, Evaluation)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(EvalError::Invalid("mixture needs components".into()));
        }
        let sum: f64 = pairs.iter().map(|(c, _)| c).sum();
        if (sum - 1.0).abs() > MASS_TOL {
            return Err(EvalError::InvalidMixture { sum });
        }
        if pairs.iter().any(|(c, _)| *c < 0.0) {
            return Err(EvalError::Invalid("mixture coefficients must be nonnegative".into()));
        }
        Ok(Evaluation::Mixture {
            components: pairs
                .into_iter()
                .map(|(coefficient, evaluation)| Component {
                    coefficient,
                    evaluation,
                })
                .collect(),
        })
    }

    /// Re-checks all structural invariants. Deserialized values should be
    /// validated before use since serde does not enforce them.
    pub fn validate(&self) -> Result<()> {
        match self {
            Evaluation::Cesaro { horizon } => Evaluation::cesaro(*horizon).map(|_| ()),
            Evaluation::Abel { discount } => Evaluation::abel(*discount).map(|_| ()),
            Evaluation::Atomic { atoms } => {
                Evaluation::atomic(atoms.iter().map(|a| (a.time, a.weight)).collect()).map(|_| ())
            }
            Evaluation::Piecewise {
                breakpoints,
                densities,
            } => Evaluation::piecewise(breakpoints.clone(), densities.clone()).map(|_| ()),
            Evaluation::Mixture { components } => {
                let sum: f64 = components.iter().map(|c| c.coefficient).sum();
                if (sum - 1.0).abs() > MASS_TOL {
                    return Err(EvalError::InvalidMixture { sum });
                }
                for c in components {
                    if c.coefficient < 0.0 {
                        return Err(EvalError::Invalid("negative mixture coefficient".into()));
                    }
                    c.evaluation.validate()?;
                }
                Ok(())
            }
        }
    }

    fn flatten_into(&self, coeff: f64, flat: &mut Flat) {
        match self {
            Evaluation::Cesaro { horizon } => flat.leaves.push((coeff, Leaf::Cesaro(*horizon))),
            Evaluation::Abel { discount } => flat.leaves.push((coeff, Leaf::Abel(*discount))),
            Evaluation::Atomic { atoms } => {
                for a in atoms {
                    flat.atoms.push((a.time, coeff * a.weight));
                }
            }
            Evaluation::Piecewise {
                breakpoints,
                densities,
            } => flat
                .leaves
                .push((coeff, Leaf::Pieces(breakpoints.clone(), densities.clone()))),
            Evaluation::Mixture { components } => {
                for c in components {
                    if c.coefficient > 0.0 {
                        c.evaluation.flatten_into(coeff * c.coefficient, flat);
                    }
                }
            }
        }
    }

    fn flatten(&self) -> Flat {
        let mut flat = Flat {
            leaves: Vec::new(),
            atoms: Vec::new(),
        };
        self.flatten_into(1.0, &mut flat);
        // Merge coincident atoms so combinatorial evaluations stay exact.
        flat.atoms
            .sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(flat.atoms.len());
        for (t, w) in flat.atoms.drain(..) {
            match merged.last_mut() {
                Some((lt, lw)) if (t - *lt).abs() <= 1e-12 => *lw += w,
                _ => merged.push((t, w)),
            }
        }
        flat.atoms = merged;
        flat
    }

    /// Density `f_θ(s)`. Errors with [`EvalError::NoDensity`] when the
    /// measure carries atomic mass.
    pub fn density_at(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0) {
            return Err(EvalError::Invalid(format!("time {s} must be ≥ 0")));
        }
        match self {
            Evaluation::Cesaro { horizon } => {
                Ok(if s <= *horizon { 1.0 / horizon } else { 0.0 })
            }
            Evaluation::Abel { discount } => Ok(discount * (-discount * s).exp()),
            Evaluation::Atomic { .. } => Err(EvalError::NoDensity),
            _ => {
                let flat = self.flatten();
                if !flat.atoms.is_empty() {
                    return Err(EvalError::NoDensity);
                }
                Ok(flat.density(s))
            }
        }
    }

    /// Right-continuous distribution function `F(x) = θ([0, x])`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        match self {
            Evaluation::Cesaro { horizon } => (x / horizon).min(1.0),
            Evaluation::Abel { discount } => -(-discount * x).exp_m1(),
            Evaluation::Atomic { atoms } => atoms
                .iter()
                .filter(|a| a.time <= x)
                .map(|a| a.weight)
                .sum(),
            Evaluation::Piecewise {
                breakpoints,
                densities,
            } => {
                let mut acc = 0.0;
                for (k, w) in breakpoints.windows(2).enumerate() {
                    if x >= w[1] {
                        acc += densities[k] * (w[1] - w[0]);
                    } else if x > w[0] {
                        acc += densities[k] * (x - w[0]);
                        break;
                    } else {
                        break;
                    }
                }
                acc.min(1.0)
            }
            Evaluation::Mixture { components } => components
                .iter()
                .map(|c| c.coefficient * c.evaluation.cdf(x))
                .sum(),
        }
    }

    /// `∫_0^x F(u) du`, with `F(u) = 0` for `u < 0`. Closed form per kind;
    /// this is what makes the smoothing operator exact on grid cells.
    pub fn cdf_integral(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self {
            Evaluation::Cesaro { horizon } => {
                if x <= *horizon {
                    x * x / (2.0 * horizon)
                } else {
                    horizon / 2.0 + (x - horizon)
                }
            }
            Evaluation::Abel { discount } => x + (-discount * x).exp_m1() / discount,
            Evaluation::Atomic { atoms } => atoms
                .iter()
                .map(|a| a.weight * (x - a.time).max(0.0))
                .sum(),
            Evaluation::Piecewise {
                breakpoints,
                densities,
            } => {
                let mut acc = 0.0;
                let mut cdf_left = 0.0;
                for (k, w) in breakpoints.windows(2).enumerate() {
                    if x <= w[0] {
                        break;
                    }
                    let hi = x.min(w[1]);
                    let d = hi - w[0];
                    acc += cdf_left * d + densities[k] * d * d / 2.0;
                    cdf_left += densities[k] * (w[1] - w[0]);
                }
                if x > breakpoints[breakpoints.len() - 1] {
                    acc += x - breakpoints[breakpoints.len() - 1];
                }
                // Mass below the first breakpoint is zero, but F = 0 there,
                // so nothing accrues on [0, breakpoints[0]].
                acc
            }
            Evaluation::Mixture { components } => components
                .iter()
                .map(|c| c.coefficient * c.evaluation.cdf_integral(x))
                .sum(),
        }
    }

    /// θ([a, b]) for a closed interval (atoms at `a` included).
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        if b < a {
            return 0.0;
        }
        let base = self.cdf(b) - self.cdf(a);
        base + self.atom_mass_at(a)
    }

    fn atom_mass_at(&self, t: f64) -> f64 {
        match self {
            Evaluation::Atomic { atoms } => atoms
                .iter()
                .filter(|a| (a.time - t).abs() <= 1e-12)
                .map(|a| a.weight)
                .sum(),
            Evaluation::Mixture { components } => components
                .iter()
                .map(|c| c.coefficient * c.evaluation.atom_mass_at(t))
                .sum(),
            _ => 0.0,
        }
    }

    /// Smallest time `B` with `θ((B, ∞)) ≤ tail`.
    pub fn support_bound(&self, tail: f64) -> f64 {
        match self {
            Evaluation::Cesaro { horizon } => *horizon,
            Evaluation::Abel { discount } => -(tail.max(f64::MIN_POSITIVE)).ln() / discount,
            Evaluation::Atomic { atoms } => atoms.last().map(|a| a.time).unwrap_or(0.0),
            Evaluation::Piecewise { breakpoints, .. } => breakpoints[breakpoints.len() - 1],
            Evaluation::Mixture { components } => components
                .iter()
                .filter(|c| c.coefficient > 0.0)
                .map(|c| c.evaluation.support_bound(tail))
                .fold(0.0, f64::max),
        }
    }

    /// Generalized inverse of the distribution function.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match self {
            Evaluation::Cesaro { horizon } => p * horizon,
            Evaluation::Abel { discount } => {
                if p >= 1.0 {
                    self.support_bound(1e-15)
                } else {
                    -(1.0 - p).ln() / discount
                }
            }
            Evaluation::Atomic { atoms } => {
                let mut acc = 0.0;
                for a in atoms {
                    acc += a.weight;
                    if acc >= p - 1e-15 {
                        return a.time;
                    }
                }
                atoms.last().map(|a| a.time).unwrap_or(0.0)
            }
            _ => {
                // Bisection on the cdf; adequate for piecewise and mixtures.
                let mut lo = 0.0;
                let mut hi = self.support_bound(((1.0 - p) * 0.5).max(1e-13)) + 1.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.cdf(mid) >= p {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                hi
            }
        }
    }

    /// `∫ h dθ` with default quadrature settings.
    pub fn integrate<F: Fn(f64) -> f64>(&self, h: F) -> Result<f64> {
        self.integrate_cfg(h, &QuadConfig::default()).map(|e| e.value)
    }

    /// `∫ h dθ` with an explicit error bound: quadrature tolerance plus the
    /// truncated tail mass times the largest observed `|h|`.
    pub fn integrate_cfg<F: Fn(f64) -> f64>(
        &self,
        h: F,
        cfg: &QuadConfig,
    ) -> Result<IntegralEstimate> {
        let flat = self.flatten();
        let bad = Cell::new(false);
        let h_max = Cell::new(0.0_f64);
        let eval = |t: f64| {
            let v = h(t);
            if !v.is_finite() {
                bad.set(true);
            }
            h_max.set(h_max.get().max(v.abs()));
            v
        };

        let mut value = 0.0;
        for &(t, w) in &flat.atoms {
            value += w * eval(t);
        }

        let mut tail_loss = 0.0;
        if !flat.leaves.is_empty() {
            let mut points = Vec::new();
            let mut hi = 0.0_f64;
            for (c, leaf) in &flat.leaves {
                leaf.breakpoints(&mut points);
                let b = leaf.support_bound(cfg.tail_mass);
                hi = hi.max(b);
                if let Leaf::Abel(_) = leaf {
                    tail_loss += c * cfg.tail_mass;
                }
            }
            quad::normalize_breakpoints(&mut points, 0.0, hi, 1e-12);
            value += quad::integrate_cells(|t| flat.density(t) * eval(t), &points, cfg.tol);
        }

        if bad.get() {
            return Err(EvalError::InvalidIntegrand);
        }
        Ok(IntegralEstimate {
            value,
            error_bound: cfg.tol + tail_loss * h_max.get(),
        })
    }

    /// Shift total variation `TV_s(θ)`.
    ///
    /// Density part: `∫ (f(t) - f(t+s))⁺ dt` — exact on the union grid when
    /// every leaf is piecewise constant, adaptive quadrature otherwise.
    /// Atomic part: positive net weight after aligning shifted atoms.
    pub fn shift_tv(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0) || !s.is_finite() {
            return Err(EvalError::Invalid(format!("shift {s} must be ≥ 0")));
        }
        if s == 0.0 {
            return Ok(0.0);
        }
        match self {
            Evaluation::Cesaro { horizon } => Ok((s / horizon).min(1.0)),
            Evaluation::Abel { discount } => Ok(-(-discount * s).exp_m1()),
            _ => {
                let flat = self.flatten();
                Ok(atomic_positive_part(&flat.atoms, s) + density_shift(&flat, s, true))
            }
        }
    }

    /// `I_s(θ) = ∫ |f(t+s) - f(t)| dt` for density-based evaluations.
    pub fn shift_l1(&self, s: f64) -> Result<f64> {
        let flat = self.flatten();
        if !flat.atoms.is_empty() {
            return Err(EvalError::NoDensity);
        }
        if s == 0.0 {
            return Ok(0.0);
        }
        Ok(density_shift(&flat, s, false))
    }

    /// `sup_{0 ≤ s ≤ S} TV_s(θ)` with the default 1000-point grid.
    pub fn sup_shift_tv(&self, s_max: f64) -> Result<f64> {
        self.sup_shift_tv_grid(s_max, 1000)
    }

    /// Grid sup of the shift total variation. Cesàro and Abel evaluations
    /// are monotone in the shift, so their sup is taken in closed form.
    pub fn sup_shift_tv_grid(&self, s_max: f64, grid: usize) -> Result<f64> {
        if !(s_max >= 0.0) {
            return Err(EvalError::Invalid(format!("horizon {s_max} must be ≥ 0")));
        }
        if s_max == 0.0 {
            return Ok(0.0);
        }
        match self {
            Evaluation::Cesaro { .. } | Evaluation::Abel { .. } => self.shift_tv(s_max),
            _ => {
                let n = grid.max(1);
                let mut best = 0.0_f64;
                for j in 1..=n {
                    let s = s_max * j as f64 / n as f64;
                    best = best.max(self.shift_tv(s)?);
                }
                Ok(best)
            }
        }
    }

    /// Moving-average smoothing `ς(θ, S)`: the evaluation whose density at
    /// `s` is `θ([s-S, s]) / S`, realized as a piecewise-constant density
    /// whose mass on every output cell is exact (via `cdf_integral`).
    pub fn smooth(&self, window: f64) -> Result<Evaluation> {
        self.smooth_with_resolution(window, 100)
    }

    pub fn smooth_with_resolution(&self, window: f64, resolution: usize) -> Result<Evaluation> {
        if !(window > 0.0) || !window.is_finite() {
            return Err(EvalError::InvalidWindow(window));
        }
        let flat = self.flatten();
        let tail = 1e-13;
        let support = self.support_bound(tail);
        let hi = support + window;

        // Feature points: wherever the input density jumps or carries an
        // atom, the smoothed density kinks at p and p + window.
        let mut points = Vec::new();
        for (_, leaf) in &flat.leaves {
            let mut own = Vec::new();
            leaf.breakpoints(&mut own);
            for p in own {
                points.push(p);
                points.push(p + window);
            }
        }
        for &(t, _) in &flat.atoms {
            points.push(t);
            points.push(t + window);
        }
        quad::normalize_breakpoints(&mut points, 0.0, hi, 1e-12);

        // Refine so the piecewise-constant realization resolves the density
        // profile, with a cap on the total cell count.
        let span = hi;
        let target = (window / resolution.max(1) as f64).max(span / 20_000.0);
        let mut grid = Vec::with_capacity(points.len() * 4);
        for w in points.windows(2) {
            let width = w[1] - w[0];
            let pieces = (width / target).ceil().max(1.0) as usize;
            for j in 0..pieces {
                grid.push(w[0] + width * j as f64 / pieces as f64);
            }
        }
        grid.push(hi);

        let g = |x: f64| self.cdf_integral(x);
        let mut densities = Vec::with_capacity(grid.len() - 1);
        let mut mass_acc = 0.0;
        let mut prev = (g(grid[0]) - g(grid[0] - window)) / window;
        for w in grid.windows(2) {
            let next = (g(w[1]) - g(w[1] - window)) / window;
            let cell_mass = (next - prev).max(0.0);
            mass_acc += cell_mass;
            densities.push(cell_mass / (w[1] - w[0]));
            prev += cell_mass;
        }
        if mass_acc <= 0.0 {
            return Err(EvalError::Invalid("smoothing produced no mass".into()));
        }
        // Renormalize the tail-truncation residue (≤ ~1e-13).
        let scale = 1.0 / mass_acc;
        for d in &mut densities {
            *d *= scale;
        }
        Evaluation::piecewise(grid, densities)
    }

    /// Compact one-line descriptor used in reports and CSV output.
    pub fn descriptor(&self) -> String {
        format!("{self}")
    }
}

impl fmt::Display for Evaluation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Evaluation::Cesaro { horizon } => write!(f, "cesaro(t={horizon})"),
            Evaluation::Abel { discount } => write!(f, "abel(rho={discount})"),
            Evaluation::Atomic { atoms } => {
                if atoms.len() == 1 {
                    write!(f, "dirac(t={})", atoms[0].time)
                } else {
                    write!(f, "atomic(n={})", atoms.len())
                }
            }
            Evaluation::Piecewise { densities, .. } => {
                write!(f, "piecewise(cells={})", densities.len())
            }
            Evaluation::Mixture { components } => {
                write!(f, "mix(")?;
                for (i, c) in components.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{}*{}", c.coefficient, c.evaluation)?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Positive part of the atomic signed measure `θ_a - θ_a(· + s)`: align the
/// original atoms with the shifted copies (shifted atoms falling below 0 can
/// never sit inside a Borel subset of the half-line and are dropped), then
/// sum positive nets per location.
fn atomic_positive_part(atoms: &[(f64, f64)], s: f64) -> f64 {
    if atoms.is_empty() {
        return 0.0;
    }
    let mut events: Vec<(f64, f64)> = Vec::with_capacity(atoms.len() * 2);
    for &(t, w) in atoms {
        events.push((t, w));
        let shifted = t - s;
        if shifted >= 0.0 {
            events.push((shifted, -w));
        }
    }
    events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut acc = 0.0;
    let mut i = 0;
    while i < events.len() {
        let mut net = events[i].1;
        let mut j = i + 1;
        while j < events.len() && events[j].0 - events[i].0 <= 1e-12 {
            net += events[j].1;
            j += 1;
        }
        if net > 0.0 {
            acc += net;
        }
        i = j;
    }
    acc
}

/// `∫ (f(t) - f(t+s))⁺ dt` (`one_sided`) or `∫ |f(t) - f(t+s)| dt` for the
/// density part of a flattened measure.
fn density_shift(flat: &Flat, s: f64, one_sided: bool) -> f64 {
    if flat.leaves.is_empty() {
        return 0.0;
    }
    let exact = flat.leaves.iter().all(|(_, l)| l.is_piecewise_constant());
    let tail = 1e-13;
    let mut points = Vec::new();
    let mut hi = 0.0_f64;
    for (_, leaf) in &flat.leaves {
        let mut own = Vec::new();
        leaf.breakpoints(&mut own);
        hi = hi.max(leaf.support_bound(tail));
        for p in own {
            points.push(p);
            points.push(p - s);
        }
    }
    quad::normalize_breakpoints(&mut points, 0.0, hi, 1e-12);

    let diff = |t: f64| flat.density(t) - flat.density(t + s);
    if exact {
        // Both f(t) and f(t+s) are constant inside every union-grid cell.
        let mut acc = 0.0;
        for w in points.windows(2) {
            let d = diff(0.5 * (w[0] + w[1]));
            let d = if one_sided { d.max(0.0) } else { d.abs() };
            acc += d * (w[1] - w[0]);
        }
        acc
    } else {
        let f = |t: f64| {
            let d = diff(t);
            if one_sided {
                d.max(0.0)
            } else {
                d.abs()
            }
        };
        quad::integrate_cells(f, &points, 5e-11)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Brute-force Riemann oracle, deliberately independent of the adaptive
    /// quadrature path: midpoint rule on a uniform grid.
    fn riemann<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        (0..n).map(|i| f(a + (i as f64 + 0.5) * h) * h).sum()
    }

    #[test]
    fn density_closed_forms() {
        let abel = Evaluation::abel(0.5).unwrap();
        assert_abs_diff_eq!(abel.density_at(0.0).unwrap(), 0.5);
        let ces = Evaluation::cesaro(4.0).unwrap();
        assert_abs_diff_eq!(ces.density_at(2.0).unwrap(), 0.25);
        assert_abs_diff_eq!(ces.density_at(5.0).unwrap(), 0.0);
        let dirac = Evaluation::dirac(0.0).unwrap();
        assert_eq!(dirac.density_at(0.0), Err(EvalError::NoDensity));
    }

    #[test]
    fn integrate_probability_and_mean() {
        for theta in [
            Evaluation::cesaro(7.0).unwrap(),
            Evaluation::abel(0.3).unwrap(),
            Evaluation::dirac(2.0).unwrap(),
            Evaluation::mix(vec![
                (0.25, Evaluation::cesaro(3.0).unwrap()),
                (0.75, Evaluation::abel(0.9).unwrap()),
            ])
            .unwrap(),
        ] {
            assert_abs_diff_eq!(theta.integrate(|_| 3.5).unwrap(), 3.5, epsilon = 1e-9);
        }
        let ces = Evaluation::cesaro(4.0).unwrap();
        assert_abs_diff_eq!(ces.integrate(|s| s).unwrap(), 2.0, epsilon = 1e-9);
        // ∫ e^{-s} e^{-s} ds = 1/2, cross-checked against a blunt Riemann sum.
        let abel = Evaluation::abel(1.0).unwrap();
        let got = abel.integrate(|s| (-s).exp()).unwrap();
        assert_abs_diff_eq!(got, 0.5, epsilon = 1e-8);
        let oracle = riemann(|s| (-s).exp() * (-s).exp(), 0.0, 60.0, 4_000_000);
        assert_abs_diff_eq!(got, oracle, epsilon = 1e-7);
    }

    #[test]
    fn integrate_rejects_non_finite() {
        let ces = Evaluation::cesaro(4.0).unwrap();
        let got = ces.integrate(|s| if s > 2.0 { f64::NAN } else { 1.0 });
        assert_eq!(got, Err(EvalError::InvalidIntegrand));
    }

    #[test]
    fn shift_tv_closed_forms() {
        let abel = Evaluation::abel(0.1).unwrap();
        assert_abs_diff_eq!(
            abel.shift_tv(1.0).unwrap(),
            1.0 - (-0.1_f64).exp(),
            epsilon = 1e-14
        );
        let ces = Evaluation::cesaro(10.0).unwrap();
        assert_abs_diff_eq!(ces.shift_tv(2.0).unwrap(), 0.2, epsilon = 1e-14);
        assert_abs_diff_eq!(ces.shift_tv(20.0).unwrap(), 1.0, epsilon = 1e-14);
        let dirac = Evaluation::dirac(0.0).unwrap();
        assert_abs_diff_eq!(dirac.shift_tv(1.0).unwrap(), 1.0);
        for theta in [abel, ces, dirac] {
            assert_eq!(theta.shift_tv(0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn shift_tv_atomic_alignment() {
        // Atoms at 0 and 1 with shift 1: the shifted copy puts 0.5 back on 0.
        let theta = Evaluation::atomic(vec![(0.0, 0.5), (1.0, 0.5)]).unwrap();
        assert_abs_diff_eq!(theta.shift_tv(1.0).unwrap(), 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(theta.shift_tv(0.5).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn shift_tv_numeric_matches_closed_form_via_mixture() {
        // A single-component mixture goes through the generic density path.
        for (theta, s, want) in [
            (
                Evaluation::mix(vec![(1.0, Evaluation::abel(0.1).unwrap())]).unwrap(),
                1.0,
                1.0 - (-0.1_f64).exp(),
            ),
            (
                Evaluation::mix(vec![(1.0, Evaluation::cesaro(10.0).unwrap())]).unwrap(),
                2.0,
                0.2,
            ),
        ] {
            assert_abs_diff_eq!(theta.shift_tv(s).unwrap(), want, epsilon = 1e-9);
        }
    }

    #[test]
    fn mixture_tv_subadditive() {
        let abel = Evaluation::abel(0.1).unwrap();
        let ces = Evaluation::cesaro(10.0).unwrap();
        let mixed = Evaluation::mix(vec![(0.5, abel.clone()), (0.5, ces.clone())]).unwrap();
        assert_abs_diff_eq!(mixed.density_at(0.0).unwrap(), 0.1, epsilon = 1e-14);
        let direct = mixed.shift_tv(1.0).unwrap();
        let bound = 0.5 * abel.shift_tv(1.0).unwrap() + 0.5 * ces.shift_tv(1.0).unwrap();
        assert!(direct <= bound + 1e-9, "direct {direct} > bound {bound}");
    }

    #[test]
    fn mix_rejects_bad_coefficients() {
        let theta = Evaluation::cesaro(1.0).unwrap();
        let err = Evaluation::mix(vec![(0.5, theta.clone()), (0.4, theta)]);
        assert!(matches!(err, Err(EvalError::InvalidMixture { .. })));
    }

    #[test]
    fn mixture_integration_is_affine() {
        let a = Evaluation::abel(0.4).unwrap();
        let c = Evaluation::cesaro(6.0).unwrap();
        let m = Evaluation::mix(vec![(0.3, a.clone()), (0.7, c.clone())]).unwrap();
        let h = |s: f64| (0.5 * s).sin() + 0.2 * s;
        let lhs = m.integrate(h).unwrap();
        let rhs = 0.3 * a.integrate(h).unwrap() + 0.7 * c.integrate(h).unwrap();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10);
    }

    #[test]
    fn sup_shift_tv_monotone_families() {
        let abel = Evaluation::abel(0.1).unwrap();
        assert_abs_diff_eq!(
            abel.sup_shift_tv(1.0).unwrap(),
            1.0 - (-0.1_f64).exp(),
            epsilon = 1e-14
        );
        let ces = Evaluation::cesaro(10.0).unwrap();
        assert_abs_diff_eq!(ces.sup_shift_tv(2.0).unwrap(), 0.2, epsilon = 1e-14);
        assert_eq!(ces.sup_shift_tv(0.0).unwrap(), 0.0);
    }

    #[test]
    fn smooth_dirac_is_uniform() {
        let dirac = Evaluation::dirac(0.0).unwrap();
        let smoothed = dirac.smooth(2.0).unwrap();
        assert_abs_diff_eq!(smoothed.density_at(0.3).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(smoothed.density_at(1.9).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(smoothed.cdf(2.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn smooth_cesaro_is_trapezoid() {
        let ces = Evaluation::cesaro(4.0).unwrap();
        let sm = ces.smooth(2.0).unwrap();
        // Rising ramp on [0,2], flat 1/4 on [2,4], falling on [4,6].
        assert_abs_diff_eq!(sm.density_at(3.0).unwrap(), 0.25, epsilon = 1e-6);
        assert!(sm.density_at(0.5).unwrap() < 0.25);
        assert!(sm.density_at(5.5).unwrap() < 0.25);
        // Quadrature oracle: density of the convolution at a point is
        // θ([s-S, s]) / S.
        for s in [0.7, 2.5, 4.9] {
            let want = (ces.cdf(s) - ces.cdf(s - 2.0)) / 2.0;
            assert_abs_diff_eq!(sm.density_at(s).unwrap(), want, epsilon = 2e-3);
        }
        // Mass on whole cells is exact; check a wide interval.
        assert_abs_diff_eq!(sm.mass(2.0, 4.0), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn smooth_preserves_mass() {
        let thetas = vec![
            Evaluation::dirac(1.5).unwrap(),
            Evaluation::cesaro(3.0).unwrap(),
            Evaluation::abel(0.4).unwrap(),
            Evaluation::atomic(vec![(0.0, 0.25), (2.0, 0.75)]).unwrap(),
            Evaluation::mix(vec![
                (0.5, Evaluation::abel(0.2).unwrap()),
                (0.5, Evaluation::dirac(1.0).unwrap()),
            ])
            .unwrap(),
        ];
        for theta in thetas {
            for window in [0.5, 2.0] {
                let sm = theta.smooth(window).unwrap();
                let mass = sm.integrate(|_| 1.0).unwrap();
                assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-10);
            }
        }
        assert!(matches!(
            Evaluation::dirac(0.0).unwrap().smooth(0.0),
            Err(EvalError::InvalidWindow(_))
        ));
    }

    #[test]
    fn smoothing_regularity_gain() {
        // sup_{σ ≤ s} TV_σ(ς(θ, S)) ≤ 2s/S.
        for theta in [
            Evaluation::dirac(0.0).unwrap(),
            Evaluation::cesaro(5.0).unwrap(),
        ] {
            for window in [1.0, 10.0] {
                let sm = theta.smooth(window).unwrap();
                for j in 1..=8 {
                    let s = window * j as f64 / 8.0;
                    let got = sm.sup_shift_tv_grid(s, 64).unwrap();
                    assert!(
                        got <= 2.0 * s / window + 1e-8,
                        "{theta}: sup TV {got} > {}",
                        2.0 * s / window
                    );
                }
            }
        }
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let theta = Evaluation::mix(vec![
            (0.5, Evaluation::abel(0.1).unwrap()),
            (0.25, Evaluation::cesaro(10.0).unwrap()),
            (0.25, Evaluation::atomic(vec![(0.5, 0.5), (1.25, 0.5)]).unwrap()),
        ])
        .unwrap();
        let json = serde_json::to_string(&theta).unwrap();
        let back: Evaluation = serde_json::from_str(&json).unwrap();
        back.validate().unwrap();
        assert_eq!(theta, back);
        // Spot-check the wire format names.
        assert!(json.contains("\"kind\":\"mixture\""));
        assert!(json.contains("\"kind\":\"abel\""));
    }
}
