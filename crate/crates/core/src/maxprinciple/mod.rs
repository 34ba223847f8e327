//! Support of the reflected diffusion through the deterministic Skorokhod
//! problem, the submartingale property of subsolutions, and constancy of
//! solutions on the reachable set `D_0`.
//!
//! ```
//! use rsde::maxprinciple::{sample_support_set, SupportOptions};
//! use rsde::{Coefficients, DomainModel, Matrix, Point};
//!
//! let disk = DomainModel::disk([0.0, 0.0], 1.0).r0(0.5).build().unwrap().verify(10_000).unwrap();
//! let coeffs = Coefficients::constant(Matrix::<2>::zeros(), Point::<2>::new(1.0, 0.0));
//! let s = sample_support_set(&disk, &coeffs, &Point::<2>::zeros(), 2.0, 5, 4.0, &SupportOptions::default()).unwrap();
//! // The flow runs into the boundary at (1, 0) and stays there.
//! assert!(s.endpoints.iter().all(|e| (e - Point::<2>::new(1.0, 0.0)).norm() < 1e-9));
//! ```

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::coefficients::Coefficients;
use crate::geometry::VerifiedDomain;
use crate::paths::{seeded_rng, BrownianPath, StreamId, TimeGrid};
use crate::reflected::{simulate_reflected, solve_skorokhod, ReflectedError};
use crate::stats::mean_and_se;
use crate::Point;

#[derive(Debug, Error)]
pub enum SupportError {
    #[error("sigma depends on the state; set allow_state_dependent_sigma to sample anyway")]
    StateDependentSigma,
    #[error("start point lies outside the domain (distance {0})")]
    StartOutside(f64),
    #[error(transparent)]
    Reflected(#[from] ReflectedError),
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SupportOptions {
    /// Linear pieces of each random control.
    pub segments: usize,
    /// Steps of the integration grid on `[0, t1]`.
    pub n_steps: usize,
    /// Spacing of the probe grid used by the coverage metric.
    pub probe_spacing: f64,
    /// Spacing of the straight-run targets (0 disables them).
    pub star_spacing: f64,
    pub seed: u64,
    pub allow_state_dependent_sigma: bool,
}

impl Default for SupportOptions {
    fn default() -> Self {
        Self {
            segments: 8,
            n_steps: 200,
            probe_spacing: 0.1,
            star_spacing: 0.125,
            seed: 0,
            allow_state_dependent_sigma: false,
        }
    }
}

/// Endpoints `Z^{x0,h}(t1)` of the Skorokhod problem over a family of
/// controls `h`.
#[derive(Debug, Clone, Serialize)]
pub struct SupportSample<const D: usize> {
    #[serde(skip)]
    pub x0: Point<D>,
    pub t1: f64,
    /// Piecewise constant `h'` per grid step, one entry per control.
    #[serde(skip)]
    pub hdots: Vec<Vec<Point<D>>>,
    #[serde(skip)]
    pub endpoints: Vec<Point<D>>,
    /// Number of random controls; the straight runs follow them.
    pub random_controls: usize,
    /// `max_{probe} min_{endpoint} |probe - endpoint|`.
    pub coverage: f64,
    pub probes: usize,
}

/// Probe points: a lattice of the given spacing inside the domain plus
/// boundary points at the same spacing.
pub fn probe_grid<const D: usize>(domain: &VerifiedDomain<D>, spacing: f64) -> Vec<Point<D>> {
    let (lo, hi) = domain.shape().bounds();
    let dims: Vec<usize> = (0..D).map(|i| ((hi[i] - lo[i]) / spacing).ceil() as usize + 1).collect();
    let total: usize = dims.iter().product();
    let mut out = Vec::new();
    for idx in 0..total {
        let mut rest = idx;
        let mut p = lo;
        for i in 0..D {
            p[i] += (rest % dims[i]) as f64 * spacing;
            rest /= dims[i];
        }
        if domain.contains(&p) {
            out.push(p);
        }
    }
    let perimeter_guess: f64 = (0..D).map(|i| hi[i] - lo[i]).sum::<f64>() * 4.0;
    out.extend(domain.shape().boundary_points(((perimeter_guess / spacing).ceil() as usize).max(8)));
    out
}

fn coverage_of<const D: usize>(probes: &[Point<D>], cloud: &[Point<D>]) -> f64 {
    probes
        .par_iter()
        .map(|p| cloud.iter().map(|c| (c - p).norm()).fold(f64::INFINITY, f64::min))
        .reduce(|| 0.0, f64::max)
}

/// Random piecewise-linear controls with slopes uniform in
/// `[-hdot_bound, hdot_bound]^D`, followed (for constant invertible sigma) by
/// straight runs aimed at a lattice of targets.
#[allow(clippy::too_many_arguments)]
pub fn sample_support_set<const D: usize>(
    domain: &VerifiedDomain<D>,
    coeffs: &Coefficients<D>,
    x0: &Point<D>,
    t1: f64,
    n_controls: usize,
    hdot_bound: f64,
    opts: &SupportOptions,
) -> Result<SupportSample<D>, SupportError> {
    if !coeffs.has_constant_sigma() && !opts.allow_state_dependent_sigma {
        return Err(SupportError::StateDependentSigma);
    }
    let d0 = domain.distance(x0);
    if d0 > 0.0 {
        return Err(SupportError::StartOutside(d0));
    }
    let grid = TimeGrid::new(0.0, t1, opts.n_steps);
    let segments = opts.segments.clamp(1, opts.n_steps);
    let mut hdots: Vec<Vec<Point<D>>> = (0..n_controls)
        .map(|i| {
            let mut rng = seeded_rng(opts.seed, i as u64);
            let slopes: Vec<Point<D>> = (0..segments)
                .map(|_| Point::<D>::from_fn(|_, _| rng.random_range(-hdot_bound..=hdot_bound)))
                .collect();
            (0..opts.n_steps).map(|k| slopes[k * segments / opts.n_steps]).collect()
        })
        .collect();

    let sigma = coeffs.sigma(0.0, x0, 0);
    if opts.star_spacing > 0.0 && coeffs.has_constant_sigma() {
        if let Some(inv) = sigma.try_inverse() {
            let b = coeffs.drift(0.0, x0, 0);
            for target in probe_grid(domain, opts.star_spacing) {
                let h = inv * ((target - x0) / t1 - b);
                if h.amax() <= hdot_bound {
                    hdots.push(vec![h; opts.n_steps]);
                }
            }
        }
    }

    let endpoints: Result<Vec<Point<D>>, ReflectedError> = hdots
        .par_iter()
        .map(|h| solve_skorokhod(domain, coeffs, x0, grid, h, &0usize).map(|t| *t.states.last().expect("nonempty")))
        .collect();
    let endpoints = endpoints?;
    let probes = probe_grid(domain, opts.probe_spacing);
    let coverage = coverage_of(&probes, &endpoints);
    Ok(SupportSample { x0: *x0, t1, hdots, endpoints, random_controls: n_controls, coverage, probes: probes.len() })
}

/// Spread of `u` over the sampled reachable set.
#[derive(Debug, Clone, Serialize)]
pub struct ConstancyReport {
    pub min: f64,
    pub max: f64,
    pub range: f64,
    pub tol: f64,
    pub passed: bool,
}

/// `max u - min u` over the endpoints and `x0`, compared with `tol`.
pub fn check_constancy<const D: usize>(
    sample: &SupportSample<D>,
    u: impl Fn(&Point<D>) -> f64,
    tol: f64,
) -> ConstancyReport {
    let vals = std::iter::once(u(&sample.x0)).chain(sample.endpoints.iter().map(&u));
    let (min, max) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let range = max - min;
    ConstancyReport { min, max, range, tol, passed: range <= tol }
}

#[derive(Debug, Clone, Serialize)]
pub struct PairRecord {
    pub s: f64,
    pub t: f64,
    /// `E u(t, X_t) - E u(s, X_s)`.
    pub mean_diff: f64,
    pub std_err: f64,
    pub unconditional_passed: bool,
    /// Mean over restart states of the continuation average minus `u(s, y)`.
    pub conditional_mean: f64,
    pub conditional_se: f64,
    /// Fraction of states whose own average falls below `-3` per-state SE.
    pub violation_fraction: f64,
    pub conditional_passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SubmartingaleReport {
    pub paths: usize,
    pub branches: usize,
    pub pairs: Vec<PairRecord>,
    pub unconditional_passed: bool,
    pub conditional_passed: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SubmartingaleOptions {
    pub paths: usize,
    pub branches: usize,
    /// Largest simulation step.
    pub dt: f64,
    pub seed: u64,
    /// Tolerated fraction of individually violating restart states.
    pub max_violation_fraction: f64,
}

impl Default for SubmartingaleOptions {
    fn default() -> Self {
        Self { paths: 400, branches: 50, dt: 1e-3, seed: 0, max_violation_fraction: 0.05 }
    }
}

/// Two-level test that `t -> u(t, X_t)` is a submartingale along the
/// reflected diffusion (control 0) from `x0`, for every pair `s < t` of
/// `times`.
pub fn check_submartingale<const D: usize>(
    domain: &VerifiedDomain<D>,
    coeffs: &Coefficients<D>,
    u: impl Fn(f64, &Point<D>) -> f64 + Sync,
    x0: &Point<D>,
    times: &[f64],
    opts: &SubmartingaleOptions,
) -> Result<SubmartingaleReport, ReflectedError> {
    let mut times = times.to_vec();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let t0 = times[0];
    let t_max = *times.last().expect("nonempty");
    let grid = TimeGrid::with_max_step(t0, t_max.max(t0 + opts.dt), opts.dt);
    let index_of = |t: f64| ((t - t0) / grid.dt()).round() as usize;
    // States of every path at every requested time.
    let states: Result<Vec<Vec<Point<D>>>, ReflectedError> = (0..opts.paths as u64)
        .into_par_iter()
        .map(|i| {
            if t_max <= t0 {
                return Ok(vec![*x0; times.len()]);
            }
            let path = BrownianPath::<D>::sample(grid, StreamId::new(opts.seed, i));
            let tr = simulate_reflected(domain, coeffs, x0, &path, &0usize)?;
            Ok(times.iter().map(|&t| tr.states[index_of(t)]).collect())
        })
        .collect();
    let states = states?;

    let mut pairs = Vec::new();
    for a in 0..times.len() {
        for b in a + 1..times.len() {
            let (s, t) = (times[a], times[b]);
            let diffs: Vec<f64> = states.iter().map(|row| u(t, &row[b]) - u(s, &row[a])).collect();
            let (mean_diff, std_err) = mean_and_se(&diffs);
            let unconditional_passed = mean_diff >= -3.0 * std_err;

            // Markov restarts from the states at s.
            let pair_seed = opts.seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(1 + (a * times.len() + b) as u64));
            let sub = TimeGrid::with_max_step(s, t, opts.dt);
            let per_state: Result<Vec<(f64, f64)>, ReflectedError> = states
                .par_iter()
                .enumerate()
                .map(|(i, row)| {
                    let y = row[a];
                    let vals: Result<Vec<f64>, ReflectedError> = (0..opts.branches)
                        .map(|j| {
                            let id = StreamId::new(pair_seed, (i * opts.branches + j) as u64);
                            let path = BrownianPath::<D>::sample(sub, id);
                            let tr = simulate_reflected(domain, coeffs, &y, &path, &0usize)?;
                            Ok(u(t, tr.states.last().expect("nonempty")))
                        })
                        .collect();
                    let (m, se) = mean_and_se(&vals?);
                    Ok((m - u(s, &y), se))
                })
                .collect();
            let per_state = per_state?;
            let ds: Vec<f64> = per_state.iter().map(|p| p.0).collect();
            let (conditional_mean, conditional_se) = mean_and_se(&ds);
            let violations = per_state.iter().filter(|(d, se)| *d < -3.0 * se).count();
            let violation_fraction = violations as f64 / per_state.len().max(1) as f64;
            let conditional_passed =
                conditional_mean >= -3.0 * conditional_se && violation_fraction <= opts.max_violation_fraction;
            pairs.push(PairRecord {
                s,
                t,
                mean_diff,
                std_err,
                unconditional_passed,
                conditional_mean,
                conditional_se,
                violation_fraction,
                conditional_passed,
            });
        }
    }
    let unconditional_passed = pairs.iter().all(|p| p.unconditional_passed);
    let conditional_passed = pairs.iter().all(|p| p.conditional_passed);
    Ok(SubmartingaleReport {
        paths: opts.paths,
        branches: opts.branches,
        pairs,
        unconditional_passed,
        conditional_passed,
        passed: unconditional_passed && conditional_passed,
    })
}

#[cfg(test)]
mod tests;
