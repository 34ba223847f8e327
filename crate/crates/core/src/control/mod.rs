//! Controlled value function: dynamic programming on a lattice, Monte Carlo
//! policy evaluation, the dynamic programming principle and the discounted
//! elliptic variant.
//!
//! The backward recursion is
//!
//! ```text
//! V_k(x) = min_u { g(t_k, x, u) dt + sum_q w_q V_{k+1}(step(x, u, e_q)) }
//! ```
//!
//! where `{e_q, w_q}` is a moment-matched quadrature on the lattice: moves of
//! `+-dx` along axis `i` with probability `a_ii dt / (2 dx^2)` (`a = sigma
//! sigma^T`, required diagonal) and a stay-put node, either tensorized over
//! the axes or as a `2D + 1` point star. The drift enters through the
//! off-lattice point `x + b dt`, read by multilinear interpolation after
//! clamping onto the region.
//!
//! ```
//! use rsde::control::{value_dp, ControlProblem, Dynamics, GridSpec};
//! use rsde::{Coefficients, DomainModel, Matrix, Point};
//!
//! let disk = DomainModel::disk([0.0, 0.0], 1.0).r0(0.5).build().unwrap();
//! let coeffs = Coefficients::constant(Matrix::<2>::identity() * 0.5, Point::<2>::zeros());
//! let problem = ControlProblem::new(coeffs, |_, _, _| 1.0, |_| 0.0, 1.0);
//! let v = value_dp(&problem, &disk, &GridSpec::new(0.2), Dynamics::Reflected).unwrap();
//! // With unit running cost and no terminal cost the value is T - t.
//! assert!((v.values[0][0] - 1.0).abs() < 1e-12);
//! ```

mod grid;
mod monte_carlo;

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use grid::{Lattice, Region, ValueGrid};
pub use monte_carlo::{check_dpp, policy_cost_mc, DppRecord, DppReport, McEstimate, Policy};

use crate::coefficients::Coefficients;
use crate::geometry::DomainModel;
use crate::penalty::PenaltyField;
use crate::Point;

use grid::interpolate_slice;

type CostFn<const D: usize> = dyn Fn(f64, &Point<D>, usize) -> f64 + Send + Sync;
type TerminalFn<const D: usize> = dyn Fn(&Point<D>) -> f64 + Send + Sync;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("grid too coarse: dt = {dt} exceeds dx^2 / (d |sigma|^2 + 1) = {limit}")]
    GridTooCoarse { dt: f64, limit: f64 },
    #[error("the lattice quadrature needs a diagonal sigma sigma^T (off-diagonal entry {value} at {where_})")]
    NonDiagonalDiffusion { value: f64, where_: String },
    #[error("value iteration did not converge within {sweeps} sweeps (last change {change})")]
    NoConvergence { sweeps: usize, change: f64 },
    #[error("discounted problem needs a positive discount rate")]
    MissingDiscount,
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// Coefficients, costs and horizon of a control problem with a finite
/// control set `0..coeffs.n_controls()`.
#[derive(Clone)]
pub struct ControlProblem<const D: usize> {
    pub coeffs: Coefficients<D>,
    running: Arc<CostFn<D>>,
    terminal: Arc<TerminalFn<D>>,
    pub horizon: f64,
    pub discount: Option<f64>,
}

impl<const D: usize> std::fmt::Debug for ControlProblem<D> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlProblem")
            .field("coeffs", &self.coeffs)
            .field("horizon", &self.horizon)
            .field("discount", &self.discount)
            .finish()
    }
}

impl<const D: usize> ControlProblem<D> {
    pub fn new(
        coeffs: Coefficients<D>,
        running: impl Fn(f64, &Point<D>, usize) -> f64 + Send + Sync + 'static,
        terminal: impl Fn(&Point<D>) -> f64 + Send + Sync + 'static,
        horizon: f64,
    ) -> Self {
        Self { coeffs, running: Arc::new(running), terminal: Arc::new(terminal), horizon, discount: None }
    }

    /// Discounted infinite-horizon problem with rate `lambda` (the terminal
    /// cost is unused).
    pub fn discounted(
        coeffs: Coefficients<D>,
        running: impl Fn(&Point<D>, usize) -> f64 + Send + Sync + 'static,
        lambda: f64,
    ) -> Self {
        Self {
            coeffs,
            running: Arc::new(move |_, x, u| running(x, u)),
            terminal: Arc::new(|_| 0.0),
            horizon: f64::INFINITY,
            discount: Some(lambda),
        }
    }

    pub fn n_controls(&self) -> usize {
        self.coeffs.n_controls()
    }

    pub fn g(&self, t: f64, x: &Point<D>, u: usize) -> f64 {
        (self.running)(t, x, u)
    }

    pub fn h(&self, x: &Point<D>) -> f64 {
        (self.terminal)(x)
    }

    /// Same problem with terminal cost `h + c`.
    pub fn shifted_terminal(&self, c: f64) -> Self {
        let h = self.terminal.clone();
        Self { terminal: Arc::new(move |x| h(x) + c), ..self.clone() }
    }

    /// Smallest `C` with `|g| + |h| <= C (1 + |x|^p)` on `samples`, and the
    /// largest oscillation ratio `|g(x) - g(y)| / |x - y|` over nearby pairs
    /// (a finite value indicates continuity at the sampled scale).
    pub fn growth_and_continuity(&self, samples: &[Point<D>], p: f64) -> (f64, f64) {
        let mut c: f64 = 0.0;
        let mut osc: f64 = 0.0;
        for x in samples {
            for u in 0..self.n_controls() {
                let s = self.g(0.0, x, u).abs() + self.h(x).abs();
                c = c.max(s / (1.0 + x.norm().powf(p)));
                let y = x + Point::<D>::repeat(1e-6);
                let dg = (self.g(0.0, x, u) - self.g(0.0, &y, u)).abs() + (self.h(x) - self.h(&y)).abs();
                osc = osc.max(dg / (x - y).norm());
            }
        }
        (c, osc)
    }
}

/// One-step map used by dynamic programming and Monte Carlo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Dynamics {
    /// Projection onto the closed domain.
    Reflected,
    /// Exact penalty flow with level `n`.
    Penalized(f64),
}

/// Stencil used for the Gaussian increment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrature {
    /// `3^D` nodes, product of the per-axis three-point rules.
    Tensor,
    /// `2D + 1` nodes.
    Star,
}

/// Which control wins a tie in the minimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieBreak {
    Lowest,
    Highest,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GridSpec {
    pub dx: f64,
    /// Time step; `None` picks the largest step allowed by the CFL bound.
    pub dt: Option<f64>,
    /// Start of the time grid (the horizon is the problem's).
    pub t0: f64,
    pub quadrature: Quadrature,
    pub tie_break: TieBreak,
}

impl GridSpec {
    pub fn new(dx: f64) -> Self {
        Self { dx, dt: None, t0: 0.0, quadrature: Quadrature::Tensor, tie_break: TieBreak::Lowest }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = Some(dt);
        self
    }

    pub fn with_quadrature(mut self, q: Quadrature) -> Self {
        self.quadrature = q;
        self
    }

    pub fn with_tie_break(mut self, t: TieBreak) -> Self {
        self.tie_break = t;
        self
    }

    /// `dx^2 / (d |sigma|^2 + 1)` with `|sigma|` the Frobenius bound of the
    /// coefficients.
    pub fn cfl_limit<const D: usize>(&self, coeffs: &Coefficients<D>) -> f64 {
        self.dx * self.dx / (D as f64 * coeffs.sigma_bound * coeffs.sigma_bound + 1.0)
    }
}

/// Width of the exterior tube carried by the penalized value grid.
pub fn penalized_tube_width<const D: usize>(domain: &DomainModel<D>, coeffs: &Coefficients<D>, n: f64, dx: f64) -> f64 {
    (3.0 * coeffs.sigma_bound / n.sqrt() + 2.0 * dx).min(2.0 * domain.r0)
}

/// Quadrature nodes `(displacement, weight)` for diagonal diffusion `diag`.
fn quadrature_nodes<const D: usize>(q: Quadrature, diag: &Point<D>, dt: f64, dx: f64) -> Vec<(Point<D>, f64)> {
    let p: Vec<f64> = (0..D).map(|i| diag[i] * dt / (dx * dx)).collect();
    match q {
        Quadrature::Star => {
            let mut out = Vec::with_capacity(2 * D + 1);
            out.push((Point::<D>::zeros(), 1.0 - p.iter().sum::<f64>()));
            for (i, &pi) in p.iter().enumerate() {
                if pi == 0.0 {
                    continue;
                }
                let mut e = Point::<D>::zeros();
                e[i] = dx;
                out.push((e, 0.5 * pi));
                out.push((-e, 0.5 * pi));
            }
            out
        }
        Quadrature::Tensor => {
            let mut out = vec![(Point::<D>::zeros(), 1.0)];
            for (i, &pi) in p.iter().enumerate() {
                if pi == 0.0 {
                    continue;
                }
                let mut next = Vec::with_capacity(out.len() * 3);
                for (v, w) in &out {
                    let mut e = Point::<D>::zeros();
                    e[i] = dx;
                    next.push((*v, w * (1.0 - pi)));
                    next.push((v + e, w * 0.5 * pi));
                    next.push((v - e, w * 0.5 * pi));
                }
                out = next;
            }
            out
        }
    }
}

/// Shared machinery of the parabolic and elliptic solvers.
struct Stepper<'a, const D: usize> {
    problem: &'a ControlProblem<D>,
    field: PenaltyField<D>,
    dynamics: Dynamics,
    spec: GridSpec,
    dt: f64,
}

impl<const D: usize> Stepper<'_, D> {
    fn check_diagonal(&self, t: f64, x: &Point<D>, u: usize) -> Result<Point<D>, ControlError> {
        let a = self.problem.coeffs.diffusion(t, x, u);
        for i in 0..D {
            for j in 0..D {
                if i != j && a[(i, j)].abs() > 1e-12 {
                    return Err(ControlError::NonDiagonalDiffusion {
                        value: a[(i, j)],
                        where_: format!("x = {:?}, control {u}", x.as_slice()),
                    });
                }
            }
        }
        Ok(Point::<D>::from_fn(|i, _| a[(i, i)]))
    }

    /// Applies the dynamics' constraint to an unconstrained one-step move.
    fn constrain(&self, y: &Point<D>) -> Point<D> {
        match self.dynamics {
            Dynamics::Reflected => self.field.domain().closest_point(y),
            Dynamics::Penalized(n) => {
                let domain = self.field.domain();
                let d = domain.distance(y);
                if d == 0.0 {
                    *y
                } else {
                    let p = domain.closest_point(y);
                    if d < 2.0 * domain.r0 {
                        p + (y - p) * (-n * self.dt).exp()
                    } else {
                        y - (y - p) * (self.field.rho_prime(d * d) * n * self.dt).min(1.0)
                    }
                }
            }
        }
    }

    /// `min_u { g dt + discount * E V(next) }` at one state.
    fn bellman(
        &self,
        grid: &ValueGrid<D>,
        next: &[f64],
        t: f64,
        slot: usize,
        discount: f64,
    ) -> Result<(f64, u16), ControlError> {
        let x = &grid.states[slot];
        let nu = self.problem.n_controls();
        let order: Vec<usize> = match self.spec.tie_break {
            TieBreak::Lowest => (0..nu).collect(),
            TieBreak::Highest => (0..nu).rev().collect(),
        };
        let mut best = (f64::INFINITY, 0u16);
        for u in order {
            let diag = self.check_diagonal(t, x, u)?;
            let b = self.problem.coeffs.drift(t, x, u);
            let centre = x + b * self.dt;
            let mut ev = 0.0;
            for (e, w) in quadrature_nodes(self.spec.quadrature, &diag, self.dt, self.spec.dx) {
                if w == 0.0 {
                    continue;
                }
                let y = grid.clamp(&self.constrain(&(centre + e)));
                // A state that does not move reads its own node, which keeps
                // ghost nodes exact when the dynamics are frozen.
                ev += w * if y == *x { next[slot] } else { interpolate_slice(&grid.lattice, grid.slots(), next, &y) };
            }
            let cost = self.problem.g(t, x, u) * self.dt + discount * ev;
            if cost < best.0 {
                best = (cost, u as u16);
            }
        }
        Ok(best)
    }
}

fn region_for<const D: usize>(domain: &DomainModel<D>, problem: &ControlProblem<D>, dynamics: Dynamics, dx: f64) -> Region {
    match dynamics {
        Dynamics::Reflected => Region::Closure,
        Dynamics::Penalized(n) => Region::Tube { width: penalized_tube_width(domain, &problem.coeffs, n, dx) },
    }
}

fn checked_dt<const D: usize>(spec: &GridSpec, coeffs: &Coefficients<D>, span: f64) -> Result<(f64, usize), ControlError> {
    let limit = spec.cfl_limit(coeffs);
    let dt = spec.dt.unwrap_or(limit);
    if dt > limit * (1.0 + 1e-12) || dt <= 0.0 {
        return Err(ControlError::GridTooCoarse { dt, limit });
    }
    let steps = (span / dt - 1e-9).ceil().max(1.0) as usize;
    Ok((span / steps as f64, steps))
}

/// Backward dynamic programming for the finite-horizon problem on
/// `[spec.t0, T]`.
pub fn value_dp<const D: usize>(
    problem: &ControlProblem<D>,
    domain: &DomainModel<D>,
    spec: &GridSpec,
    dynamics: Dynamics,
) -> Result<ValueGrid<D>, ControlError> {
    if !problem.horizon.is_finite() || problem.horizon <= spec.t0 {
        return Err(ControlError::Invalid(format!("horizon {} must exceed t0 {}", problem.horizon, spec.t0)));
    }
    let (dt, steps) = checked_dt(spec, &problem.coeffs, problem.horizon - spec.t0)?;
    let times: Vec<f64> =
        (0..=steps).map(|k| if k == steps { problem.horizon } else { spec.t0 + k as f64 * dt }).collect();
    let region = region_for(domain, problem, dynamics, spec.dx);
    let mut grid = ValueGrid::new(domain, region, spec.dx, times);
    for s in 0..grid.states.len() {
        grid.values[steps][s] = problem.h(&grid.states[s]);
    }
    let stepper = Stepper { problem, field: PenaltyField::new(domain.clone()), dynamics, spec: *spec, dt };
    for k in (0..steps).rev() {
        let t = grid.times[k];
        let results: Result<Vec<(f64, u16)>, ControlError> = {
            let g = &grid;
            let next = &grid.values[k + 1];
            (0..g.states.len()).into_par_iter().map(|s| stepper.bellman(g, next, t, s, 1.0)).collect()
        };
        let results = results?;
        for (s, (v, u)) in results.into_iter().enumerate() {
            grid.values[k][s] = v;
            grid.argmin[k][s] = u;
        }
    }
    Ok(grid)
}

/// Outcome of [`value_elliptic`].
#[derive(Debug, Clone)]
pub struct EllipticValue<const D: usize> {
    /// Single-slice grid holding the fixed point and its minimizers.
    pub grid: ValueGrid<D>,
    pub dt: f64,
    pub sweeps: usize,
    /// Truncated horizon `ln(sup|g| / (lambda eps)) / lambda`.
    pub truncation_horizon: f64,
    /// `e^{-lambda T*} sup|g| / lambda`.
    pub truncation_bound: f64,
    pub final_change: f64,
}

/// Discounted problem by value iteration with per-step discount
/// `e^{-lambda dt}`. Runs at least `T*/dt` sweeps and stops once the
/// contraction bound on the distance to the fixed point is below `eps / 2`.
pub fn value_elliptic<const D: usize>(
    problem: &ControlProblem<D>,
    domain: &DomainModel<D>,
    spec: &GridSpec,
    eps: f64,
) -> Result<EllipticValue<D>, ControlError> {
    let lambda = problem.discount.filter(|l| *l > 0.0).ok_or(ControlError::MissingDiscount)?;
    let limit = spec.cfl_limit(&problem.coeffs);
    let dt = spec.dt.unwrap_or(limit);
    if dt > limit * (1.0 + 1e-12) || dt <= 0.0 {
        return Err(ControlError::GridTooCoarse { dt, limit });
    }
    let mut grid = ValueGrid::new(domain, Region::Closure, spec.dx, vec![0.0, dt]);
    let sup_g = grid
        .states
        .iter()
        .flat_map(|x| (0..problem.n_controls()).map(move |u| problem.g(0.0, x, u).abs()))
        .fold(0.0, f64::max);
    let t_star = if sup_g > 0.0 { ((sup_g / (lambda * eps)).ln() / lambda).max(0.0) } else { 0.0 };
    let truncation_bound = (-lambda * t_star).exp() * sup_g / lambda;
    let min_sweeps = (t_star / dt).ceil() as usize;
    let max_sweeps = (10.0 * t_star / dt).ceil().max(10.0) as usize;
    let disc = (-lambda * dt).exp();
    let stepper = Stepper { problem, field: PenaltyField::new(domain.clone()), dynamics: Dynamics::Reflected, spec: *spec, dt };
    let mut sweeps = 0;
    let change = loop {
        let results: Result<Vec<(f64, u16)>, ControlError> = {
            let g = &grid;
            let cur = &grid.values[0];
            (0..g.states.len()).into_par_iter().map(|s| stepper.bellman(g, cur, 0.0, s, disc)).collect()
        };
        let results = results?;
        let mut change = 0.0f64;
        for (s, (v, u)) in results.into_iter().enumerate() {
            change = change.max((v - grid.values[0][s]).abs());
            grid.values[0][s] = v;
            grid.argmin[0][s] = u;
        }
        sweeps += 1;
        let bound = change * disc / (1.0 - disc);
        if sweeps >= min_sweeps && bound < 0.5 * eps {
            break change;
        }
        if sweeps >= max_sweeps {
            return Err(ControlError::NoConvergence { sweeps, change });
        }
    };
    grid.values[1] = grid.values[0].clone();
    Ok(EllipticValue { grid, dt, sweeps, truncation_horizon: t_star, truncation_bound, final_change: change })
}

#[cfg(test)]
mod tests;
