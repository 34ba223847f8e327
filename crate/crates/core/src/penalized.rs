//! The penalized equation
//! `dX_n = sigma dw + b dt - (n/2) grad phi(X_n) dt`.
//!
//! Two one-step maps are provided. [`PenaltyMode::Explicit`] is the plain
//! Euler step and requires `n dt <= 1`. [`PenaltyMode::Split`] first takes the
//! unpenalized Euler proposal `y` and then applies the exact penalty flow
//! `pi(y) + (y - pi(y)) e^{-n dt}`, valid on `{d < 2 r0}` where
//! `grad phi = 2 (y - pi(y))`.
//!
//! When `n dt` is large, the split step contracts the whole exterior excursion
//! of a step at once and the sup-distance statistic collapses faster than the
//! continuous-time equation allows. [`PenalizedScheme::max_stiffness`] bounds
//! `n dt` by refining the driving path with Brownian-bridge midpoints; states
//! are still reported on the coarse grid.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::coefficients::{Coefficients, ControlLaw};
use crate::geometry::VerifiedDomain;
use crate::paths::{BrownianPath, StreamId, TimeGrid};
use crate::penalty::PenaltyField;
use crate::Point;

#[derive(Debug, Error)]
pub enum PenalizedError {
    #[error("explicit penalty step is unstable: n*dt = {n_dt} > 1")]
    StabilityViolation { n_dt: f64 },
    #[error("initial state lies outside the domain (distance {distance})")]
    StartOutside { distance: f64 },
    #[error("time step must be positive")]
    NonPositiveStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyMode {
    Explicit,
    Split,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PenalizedScheme {
    pub mode: PenaltyMode,
    /// Upper bound on `n dt` per internal substep (split mode only); `None`
    /// applies the step literally on the given grid.
    pub max_stiffness: Option<f64>,
}

impl Default for PenalizedScheme {
    fn default() -> Self {
        Self { mode: PenaltyMode::Split, max_stiffness: Some(0.125) }
    }
}

impl PenalizedScheme {
    pub fn explicit() -> Self {
        Self { mode: PenaltyMode::Explicit, max_stiffness: None }
    }

    pub fn split_literal() -> Self {
        Self { mode: PenaltyMode::Split, max_stiffness: None }
    }

    /// Number of bridge refinements applied to a path with step `dt`.
    pub fn refinement(&self, n: f64, dt: f64) -> u32 {
        match (self.mode, self.max_stiffness) {
            (PenaltyMode::Split, Some(theta)) => {
                let mut levels = 0;
                while n * dt / (1u64 << levels) as f64 > theta && levels < 30 {
                    levels += 1;
                }
                levels
            }
            _ => 0,
        }
    }
}

/// One step of the penalized scheme with level `n`.
#[allow(clippy::too_many_arguments)]
pub fn step_penalized<const D: usize>(
    field: &PenaltyField<D>,
    coeffs: &Coefficients<D>,
    x: &Point<D>,
    t: f64,
    dt: f64,
    dw: &Point<D>,
    u: usize,
    n: f64,
    mode: PenaltyMode,
) -> Result<Point<D>, PenalizedError> {
    if dt <= 0.0 {
        return Err(PenalizedError::NonPositiveStep);
    }
    let base = coeffs.sigma(t, x, u) * dw + coeffs.drift(t, x, u) * dt;
    match mode {
        PenaltyMode::Explicit => {
            if n * dt > 1.0 {
                return Err(PenalizedError::StabilityViolation { n_dt: n * dt });
            }
            Ok(x + base - field.grad_phi(x) * (0.5 * n * dt))
        }
        PenaltyMode::Split => Ok(penalty_flow(field, &(x + base), n * dt)),
    }
}

/// Penalty flow over a time `n dt` (in units of `1/n`) from `y`.
fn penalty_flow<const D: usize>(field: &PenaltyField<D>, y: &Point<D>, n_dt: f64) -> Point<D> {
    let domain = field.domain();
    let d = domain.distance(y);
    if d == 0.0 {
        return *y;
    }
    let r0 = domain.r0;
    let p = domain.closest_point(y);
    if d < 2.0 * r0 {
        p + (y - p) * (-n_dt).exp()
    } else {
        let rp = field.rho_prime(d * d);
        y - (y - p) * (rp * n_dt).min(1.0)
    }
}

/// States of the penalized equation on the coarse grid.
#[derive(Debug, Clone, Serialize)]
pub struct PenalizedTrajectory<const D: usize> {
    pub grid: TimeGrid,
    #[serde(skip)]
    pub states: Vec<Point<D>>,
    pub level: f64,
    pub controls: Vec<usize>,
    pub stream_id: StreamId,
    /// Bridge refinements used internally.
    pub refinement: u32,
    /// `max d(X_n, D)` over all internal states.
    pub sup_distance: f64,
    /// Total variation of the penalty displacement.
    pub penalty_variation: f64,
}

/// Simulates the penalized equation from `x0` in the closed domain, driven by
/// `path` (given on the coarse grid).
#[allow(clippy::too_many_arguments)]
pub fn simulate_penalized<const D: usize>(
    domain: &VerifiedDomain<D>,
    coeffs: &Coefficients<D>,
    x0: &Point<D>,
    n: f64,
    path: &BrownianPath<D>,
    control: &impl ControlLaw<D>,
    scheme: PenalizedScheme,
) -> Result<PenalizedTrajectory<D>, PenalizedError> {
    let d0 = domain.distance(x0);
    if d0 > 0.0 {
        return Err(PenalizedError::StartOutside { distance: d0 });
    }
    simulate_penalized_from_any(domain, coeffs, x0, n, path, control, scheme)
}

/// As [`simulate_penalized`] but accepts exterior starting points.
#[allow(clippy::too_many_arguments)]
pub fn simulate_penalized_from_any<const D: usize>(
    domain: &VerifiedDomain<D>,
    coeffs: &Coefficients<D>,
    x0: &Point<D>,
    n: f64,
    path: &BrownianPath<D>,
    control: &impl ControlLaw<D>,
    scheme: PenalizedScheme,
) -> Result<PenalizedTrajectory<D>, PenalizedError> {
    let field = PenaltyField::new(domain.model().clone());
    let grid = path.grid();
    let levels = scheme.refinement(n, grid.dt());
    let fine = path.refine_levels(levels);
    let fgrid = fine.grid();
    let fdt = fgrid.dt();
    let per = 1usize << levels;

    let mut states = Vec::with_capacity(grid.n_steps + 1);
    let mut controls = Vec::with_capacity(grid.n_steps);
    let mut x = *x0;
    let mut sup_distance = domain.distance(&x);
    let mut penalty_variation = 0.0;
    states.push(x);
    let mut u = 0;
    for (j, dw) in fine.increments().iter().enumerate() {
        let k = j / per;
        let t = fgrid.time(j);
        if j % per == 0 {
            u = control.control(k, t, &x);
            controls.push(u);
        }
        let next = step_penalized(&field, coeffs, &x, t, fdt, dw, u, n, scheme.mode)?;
        let free = x + coeffs.sigma(t, &x, u) * dw + coeffs.drift(t, &x, u) * fdt;
        penalty_variation += (next - free).norm();
        x = next;
        sup_distance = sup_distance.max(domain.distance(&x));
        if (j + 1) % per == 0 {
            states.push(x);
        }
    }
    Ok(PenalizedTrajectory {
        grid,
        states,
        level: n,
        controls,
        stream_id: path.stream_id(),
        refinement: levels,
        sup_distance,
        penalty_variation,
    })
}

/// Simulates one trajectory per path in parallel, in path order.
pub fn simulate_penalized_bundle<const D: usize>(
    domain: &VerifiedDomain<D>,
    coeffs: &Coefficients<D>,
    x0: &Point<D>,
    n: f64,
    paths: &[BrownianPath<D>],
    control: &impl ControlLaw<D>,
    scheme: PenalizedScheme,
) -> Result<Vec<PenalizedTrajectory<D>>, PenalizedError> {
    paths
        .par_iter()
        .map(|p| simulate_penalized(domain, coeffs, x0, n, p, control, scheme))
        .collect()
}
