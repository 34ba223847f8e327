//! Monte Carlo policy evaluation and the dynamic programming principle.

use rayon::prelude::*;
use serde::Serialize;

use super::{ControlError, ControlProblem, Dynamics, ValueGrid};
use crate::coefficients::ControlLaw;
use crate::geometry::VerifiedDomain;
use crate::paths::{BrownianPath, StreamId, TimeGrid};
use crate::penalized::{simulate_penalized, PenalizedScheme};
use crate::reflected::simulate_reflected;
use crate::stats::mean_and_se;
use crate::Point;

/// Feedback policy: a fixed control or the minimizers stored in a value grid.
#[derive(Debug, Clone, Copy)]
pub enum Policy<'a, const D: usize> {
    Constant(usize),
    Grid(&'a ValueGrid<D>),
}

impl<const D: usize> ControlLaw<D> for Policy<'_, D> {
    fn control(&self, _k: usize, t: f64, x: &Point<D>) -> usize {
        match self {
            Policy::Constant(u) => *u,
            Policy::Grid(v) => v.policy_at(t, x),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub paths: usize,
}

/// States on `grid` from `x` under `policy`.
fn simulate_states<const D: usize>(
    domain: &VerifiedDomain<D>,
    problem: &ControlProblem<D>,
    x: &Point<D>,
    grid: TimeGrid,
    stream: StreamId,
    policy: &Policy<'_, D>,
    dynamics: Dynamics,
) -> Result<Vec<Point<D>>, ControlError> {
    let path = BrownianPath::<D>::sample(grid, stream);
    match dynamics {
        Dynamics::Reflected => simulate_reflected(domain, &problem.coeffs, x, &path, policy)
            .map(|t| t.states)
            .map_err(|e| ControlError::Invalid(e.to_string())),
        Dynamics::Penalized(n) => {
            simulate_penalized(domain, &problem.coeffs, x, n, &path, policy, PenalizedScheme::default())
                .map(|t| t.states)
                .map_err(|e| ControlError::Invalid(e.to_string()))
        }
    }
}

/// Left-point quadrature of the running cost over the first `k_end` steps.
fn running_cost<const D: usize>(
    problem: &ControlProblem<D>,
    grid: &TimeGrid,
    states: &[Point<D>],
    policy: &Policy<'_, D>,
    k_end: usize,
) -> f64 {
    let dt = grid.dt();
    (0..k_end)
        .map(|k| {
            let t = grid.time(k);
            let u = policy.control(k, t, &states[k]);
            problem.g(t, &states[k], u) * dt
        })
        .sum()
}

/// Mean and standard error of `int_t^T g dt + h(X_T)` over `m` paths with
/// streams `(seed, 0..m)`, on a grid of step at most `dt`.
#[allow(clippy::too_many_arguments)]
pub fn policy_cost_mc<const D: usize>(
    problem: &ControlProblem<D>,
    domain: &VerifiedDomain<D>,
    t: f64,
    x: &Point<D>,
    policy: Policy<'_, D>,
    m: usize,
    dynamics: Dynamics,
    dt: f64,
    seed: u64,
) -> Result<McEstimate, ControlError> {
    if m < 2 {
        return Err(ControlError::Invalid(format!("need at least 2 paths, got {m}")));
    }
    let grid = TimeGrid::with_max_step(t, problem.horizon, dt);
    let costs: Result<Vec<f64>, ControlError> = (0..m as u64)
        .into_par_iter()
        .map(|i| {
            let states = simulate_states(domain, problem, x, grid, StreamId::new(seed, i), &policy, dynamics)?;
            let run = running_cost(problem, &grid, &states, &policy, grid.n_steps);
            Ok(run + problem.h(states.last().expect("nonempty")))
        })
        .collect();
    let costs = costs?;
    let (mean, std_err) = mean_and_se(&costs);
    Ok(McEstimate { mean, std_err, paths: m })
}

/// One policy's side of the dynamic programming principle.
#[derive(Debug, Clone, Serialize)]
pub struct DppRecord {
    /// `"constant:<u>"` or `"optimal"`.
    pub policy_id: String,
    pub lhs: f64,
    pub rhs: f64,
    pub std_err: f64,
    /// `rhs + 3 SE + tol - lhs` (the inequality holds when nonnegative).
    pub upper_margin: f64,
    /// `lhs - (rhs - 3 SE - tol)`, checked for the optimal policy only.
    pub lower_margin: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DppReport {
    pub t: f64,
    pub tau: f64,
    pub x: Vec<f64>,
    pub tolerance: f64,
    pub records: Vec<DppRecord>,
    /// Some constant policy exceeds `V(t, x)` by more than `3 SE`.
    pub strict_witness: bool,
    pub passed: bool,
}

/// Monte Carlo estimates of `E[int_t^tau g ds + V(tau, X_tau)]` for every
/// constant policy and the grid's optimal policy, compared with `V(t, x)`
/// at tolerance `3 SE + 2 (dx + dt)`.
#[allow(clippy::too_many_arguments)]
pub fn check_dpp<const D: usize>(
    problem: &ControlProblem<D>,
    domain: &VerifiedDomain<D>,
    t: f64,
    x: &Point<D>,
    tau: f64,
    v: &ValueGrid<D>,
    m: usize,
    dynamics: Dynamics,
    seed: u64,
) -> Result<DppReport, ControlError> {
    if !(t < tau && tau < problem.horizon) {
        return Err(ControlError::Invalid(format!("need t < tau < T, got t = {t}, tau = {tau}")));
    }
    let dt = v.dt();
    let tol = 2.0 * (v.dx() + dt);
    let k_t = v.time_index(t);
    let k_tau = v.time_index(tau);
    let lhs = v.interpolate(k_t, x);
    let grid = TimeGrid::new(v.times[k_t], v.times[k_tau], k_tau - k_t);

    let mut policies: Vec<(String, Policy<'_, D>)> =
        (0..problem.n_controls()).map(|u| (format!("constant:{u}"), Policy::Constant(u))).collect();
    policies.push(("optimal".to_string(), Policy::Grid(v)));

    let mut records = Vec::new();
    let mut strict_witness = false;
    for (id, policy) in policies {
        let samples: Result<Vec<f64>, ControlError> = (0..m as u64)
            .into_par_iter()
            .map(|i| {
                let states = simulate_states(domain, problem, x, grid, StreamId::new(seed, i), &policy, dynamics)?;
                let run = running_cost(problem, &grid, &states, &policy, grid.n_steps);
                Ok(run + v.interpolate(k_tau, states.last().expect("nonempty")))
            })
            .collect();
        let (rhs, se) = mean_and_se(&samples?);
        let upper_margin = rhs + 3.0 * se + tol - lhs;
        let optimal = matches!(policy, Policy::Grid(_));
        let lower_margin = optimal.then_some(lhs - (rhs - 3.0 * se - tol));
        if !optimal && rhs - lhs > 3.0 * se {
            strict_witness = true;
        }
        let passed = upper_margin >= 0.0 && lower_margin.is_none_or(|l| l >= 0.0);
        records.push(DppRecord { policy_id: id, lhs, rhs, std_err: se, upper_margin, lower_margin, passed });
    }
    let passed = records.iter().all(|r| r.passed);
    Ok(DppReport {
        t: v.times[k_t],
        tau: v.times[k_tau],
        x: x.iter().copied().collect(),
        tolerance: tol,
        records,
        strict_witness,
        passed,
    })
}
