//! Projected Euler reference solver and the deterministic Skorokhod problem.
//!
//! The proposal `y = x + sigma dw + b dt` is kept when it lies in the closed
//! domain and otherwise replaced by its closest point, the difference being
//! the reflection increment `dxi`.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::coefficients::{Coefficients, ControlLaw};
use crate::geometry::{DomainModel, VerifiedDomain};
use crate::paths::{BrownianPath, StreamId, TimeGrid};
use crate::Point;

#[derive(Debug, Error)]
pub enum ReflectedError {
    #[error("proposal of size {size} leaves the projection tube (limit 2*r0 = {limit})")]
    ProposalOutOfTube { size: f64, limit: f64 },
    #[error("initial state lies outside the domain (distance {distance})")]
    StartOutside { distance: f64 },
    #[error("control path has {got} entries for {expected} steps")]
    ControlLength { got: usize, expected: usize },
}

/// One projected Euler step; returns the new state and the reflection
/// increment.
#[allow(clippy::too_many_arguments)]
pub fn step_projected<const D: usize>(
    domain: &DomainModel<D>,
    coeffs: &Coefficients<D>,
    x: &Point<D>,
    t: f64,
    dt: f64,
    dw: &Point<D>,
    u: usize,
) -> Result<(Point<D>, Point<D>), ReflectedError> {
    let move_ = coeffs.sigma(t, x, u) * dw + coeffs.drift(t, x, u) * dt;
    project_proposal(domain, x, &move_)
}

fn project_proposal<const D: usize>(
    domain: &DomainModel<D>,
    x: &Point<D>,
    move_: &Point<D>,
) -> Result<(Point<D>, Point<D>), ReflectedError> {
    let size = move_.norm();
    let limit = 2.0 * domain.r0;
    if size >= limit {
        return Err(ReflectedError::ProposalOutOfTube { size, limit });
    }
    let y = x + move_;
    if domain.contains(&y) {
        return Ok((y, Point::<D>::zeros()));
    }
    let p = domain.closest_point(&y);
    Ok((p, p - y))
}

/// Reflected path on the coarse grid.
#[derive(Debug, Clone, Serialize)]
pub struct ReflectedTrajectory<const D: usize> {
    pub grid: TimeGrid,
    #[serde(skip)]
    pub states: Vec<Point<D>>,
    /// Reflection accumulated over the step ending at `t_k` (`dxi[0] = 0`).
    #[serde(skip)]
    pub dxi: Vec<Point<D>>,
    /// Running total variation `|xi|(t_k)`.
    pub xi_tv: Vec<f64>,
    pub stream_id: StreamId,
    /// Bridge refinements used internally.
    pub refinement: u32,
}

impl<const D: usize> ReflectedTrajectory<D> {
    pub fn total_variation(&self) -> f64 {
        *self.xi_tv.last().expect("nonempty")
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ReflectedScheme {
    /// Refinements applied before the step-size cap is considered.
    pub min_levels: u32,
    /// Extra refinements tried after a proposal leaves the tube.
    pub max_retries: u32,
}

impl Default for ReflectedScheme {
    fn default() -> Self {
        Self { min_levels: 0, max_retries: 3 }
    }
}

/// Refinements needed for `move_bound(dt) <= r0 / 4`.
fn capped_levels(r0: f64, dt: f64, move_bound: impl Fn(f64) -> f64) -> u32 {
    let mut levels = 0;
    while move_bound(dt / (1u64 << levels) as f64) > 0.25 * r0 && levels < 20 {
        levels += 1;
    }
    levels
}

struct Accumulator<const D: usize> {
    per: usize,
    states: Vec<Point<D>>,
    dxi: Vec<Point<D>>,
    xi_tv: Vec<f64>,
    pending: Point<D>,
    tv: f64,
}

impl<const D: usize> Accumulator<D> {
    fn new(x0: Point<D>, n_steps: usize, per: usize) -> Self {
        let mut states = Vec::with_capacity(n_steps + 1);
        states.push(x0);
        Self { per, states, dxi: vec![Point::<D>::zeros()], xi_tv: vec![0.0], pending: Point::<D>::zeros(), tv: 0.0 }
    }

    fn push(&mut self, j: usize, x: Point<D>, dxi: Point<D>) {
        self.pending += dxi;
        self.tv += dxi.norm();
        if (j + 1).is_multiple_of(self.per) {
            self.states.push(x);
            self.dxi.push(self.pending);
            self.xi_tv.push(self.tv);
            self.pending = Point::<D>::zeros();
        }
    }
}

/// Projected Euler solution from `x0`, driven by `path` on its own grid.
pub fn simulate_reflected<const D: usize>(
    domain: &VerifiedDomain<D>,
    coeffs: &Coefficients<D>,
    x0: &Point<D>,
    path: &BrownianPath<D>,
    control: &impl ControlLaw<D>,
) -> Result<ReflectedTrajectory<D>, ReflectedError> {
    simulate_reflected_with(domain, coeffs, x0, path, control, ReflectedScheme::default())
}

pub fn simulate_reflected_with<const D: usize>(
    domain: &VerifiedDomain<D>,
    coeffs: &Coefficients<D>,
    x0: &Point<D>,
    path: &BrownianPath<D>,
    control: &impl ControlLaw<D>,
    scheme: ReflectedScheme,
) -> Result<ReflectedTrajectory<D>, ReflectedError> {
    let d0 = domain.distance(x0);
    if d0 > 0.0 {
        return Err(ReflectedError::StartOutside { distance: d0 });
    }
    let grid = path.grid();
    let sd = coeffs.sigma_bound;
    let bd = coeffs.drift_bound;
    let cap = capped_levels(domain.r0, grid.dt(), |dt| sd * (D as f64 * dt).sqrt() + bd * dt);
    let first = scheme.min_levels.max(cap);
    let mut last_err = None;
    for levels in first..=first + scheme.max_retries {
        match reflected_at_level(domain, coeffs, x0, path, control, levels) {
            Ok(t) => return Ok(t),
            Err(e @ ReflectedError::ProposalOutOfTube { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

fn reflected_at_level<const D: usize>(
    domain: &DomainModel<D>,
    coeffs: &Coefficients<D>,
    x0: &Point<D>,
    path: &BrownianPath<D>,
    control: &impl ControlLaw<D>,
    levels: u32,
) -> Result<ReflectedTrajectory<D>, ReflectedError> {
    let grid = path.grid();
    let fine = path.refine_levels(levels);
    let fgrid = fine.grid();
    let fdt = fgrid.dt();
    let per = 1usize << levels;
    let mut acc = Accumulator::new(*x0, grid.n_steps, per);
    let mut x = *x0;
    let mut u = 0;
    for (j, dw) in fine.increments().iter().enumerate() {
        let t = fgrid.time(j);
        if j % per == 0 {
            u = control.control(j / per, t, &x);
        }
        let (next, dxi) = step_projected(domain, coeffs, &x, t, fdt, dw, u)?;
        x = next;
        acc.push(j, x, dxi);
    }
    Ok(ReflectedTrajectory {
        grid,
        states: acc.states,
        dxi: acc.dxi,
        xi_tv: acc.xi_tv,
        stream_id: path.stream_id(),
        refinement: levels,
    })
}

/// Simulates one trajectory per path in parallel, in path order.
pub fn simulate_reflected_bundle<const D: usize>(
    domain: &VerifiedDomain<D>,
    coeffs: &Coefficients<D>,
    x0: &Point<D>,
    paths: &[BrownianPath<D>],
    control: &impl ControlLaw<D>,
    scheme: ReflectedScheme,
) -> Result<Vec<ReflectedTrajectory<D>>, ReflectedError> {
    paths
        .par_iter()
        .map(|p| simulate_reflected_with(domain, coeffs, x0, p, control, scheme))
        .collect()
}

/// Deterministic Skorokhod problem driven by the piecewise constant
/// derivative `hdot` (one value per grid step), with the
/// Stratonovich-corrected drift.
pub fn solve_skorokhod<const D: usize>(
    domain: &VerifiedDomain<D>,
    coeffs: &Coefficients<D>,
    x0: &Point<D>,
    grid: TimeGrid,
    hdot: &[Point<D>],
    control: &impl ControlLaw<D>,
) -> Result<ReflectedTrajectory<D>, ReflectedError> {
    if hdot.len() != grid.n_steps {
        return Err(ReflectedError::ControlLength { got: hdot.len(), expected: grid.n_steps });
    }
    let d0 = domain.distance(x0);
    if d0 > 0.0 {
        return Err(ReflectedError::StartOutside { distance: d0 });
    }
    let hmax = hdot.iter().map(|h| h.norm()).fold(0.0, f64::max);
    let (sd, bd) = (coeffs.sigma_bound, coeffs.drift_bound);
    let first = capped_levels(domain.r0, grid.dt(), |dt| (sd * hmax + bd) * dt);
    let mut last_err = None;
    for levels in first..=first + ReflectedScheme::default().max_retries {
        match skorokhod_at_level(domain, coeffs, x0, grid, hdot, control, levels) {
            Ok(t) => return Ok(t),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

fn skorokhod_at_level<const D: usize>(
    domain: &DomainModel<D>,
    coeffs: &Coefficients<D>,
    x0: &Point<D>,
    grid: TimeGrid,
    hdot: &[Point<D>],
    control: &impl ControlLaw<D>,
    levels: u32,
) -> Result<ReflectedTrajectory<D>, ReflectedError> {
    let fgrid = grid.refined(levels);
    let fdt = fgrid.dt();
    let per = 1usize << levels;
    let mut acc = Accumulator::new(*x0, grid.n_steps, per);
    let mut x = *x0;
    let mut u = 0;
    for j in 0..fgrid.n_steps {
        let k = j / per;
        let t = fgrid.time(j);
        if j % per == 0 {
            u = control.control(k, t, &x);
        }
        let move_ = coeffs.sigma(t, &x, u) * (hdot[k] * fdt) + coeffs.corrected_drift(t, &x, u) * fdt;
        let (next, dxi) = project_proposal(domain, &x, &move_)?;
        x = next;
        acc.push(j, x, dxi);
    }
    Ok(ReflectedTrajectory {
        grid,
        states: acc.states,
        dxi: acc.dxi,
        xi_tv: acc.xi_tv,
        stream_id: StreamId::new(0, u64::MAX),
        refinement: levels,
    })
}
