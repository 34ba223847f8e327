//! Diffusion and drift coefficients indexed by a finite control set.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::geometry::DomainModel;
use crate::paths::seeded_rng;
use crate::{Matrix, Point};

type MatrixFn<const D: usize> = dyn Fn(f64, &Point<D>, usize) -> Matrix<D> + Send + Sync;
type VectorFn<const D: usize> = dyn Fn(f64, &Point<D>, usize) -> Point<D> + Send + Sync;

/// Step of the central differences in the Stratonovich correction.
pub const CORRECTION_STEP: f64 = 1e-5;

/// `sigma(t, x, u)` and `b(t, x, u)` for controls `u` in `0..n_controls`.
#[derive(Clone)]
pub struct Coefficients<const D: usize> {
    sigma: Arc<MatrixFn<D>>,
    drift: Arc<VectorFn<D>>,
    n_controls: usize,
    constant_sigma: bool,
    /// `sup |sigma|` (Frobenius) over time, state and control.
    pub sigma_bound: f64,
    /// `sup |b|`.
    pub drift_bound: f64,
}

impl<const D: usize> fmt::Debug for Coefficients<D> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Coefficients")
            .field("n_controls", &self.n_controls)
            .field("constant_sigma", &self.constant_sigma)
            .field("sigma_bound", &self.sigma_bound)
            .field("drift_bound", &self.drift_bound)
            .finish()
    }
}

impl<const D: usize> Coefficients<D> {
    /// Constant `sigma` and `b`, a single control.
    pub fn constant(sigma: Matrix<D>, drift: Point<D>) -> Self {
        Self::controlled_drift(sigma, vec![drift])
    }

    /// Constant `sigma`, with the control selecting a constant drift.
    pub fn controlled_drift(sigma: Matrix<D>, drifts: Vec<Point<D>>) -> Self {
        assert!(!drifts.is_empty(), "control set must be nonempty");
        let drift_bound = drifts.iter().map(|b| b.norm()).fold(0.0, f64::max);
        let n = drifts.len();
        Self {
            sigma: Arc::new(move |_, _, _| sigma),
            drift: Arc::new(move |_, _, u| drifts[u]),
            n_controls: n,
            constant_sigma: true,
            sigma_bound: sigma.norm(),
            drift_bound,
        }
    }

    /// General coefficients. The bounds are supplied by the caller and can be
    /// checked with [`Coefficients::validate`].
    pub fn new(
        n_controls: usize,
        sigma: impl Fn(f64, &Point<D>, usize) -> Matrix<D> + Send + Sync + 'static,
        drift: impl Fn(f64, &Point<D>, usize) -> Point<D> + Send + Sync + 'static,
        sigma_bound: f64,
        drift_bound: f64,
    ) -> Self {
        assert!(n_controls >= 1, "control set must be nonempty");
        Self {
            sigma: Arc::new(sigma),
            drift: Arc::new(drift),
            n_controls,
            constant_sigma: false,
            sigma_bound,
            drift_bound,
        }
    }

    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    pub fn has_constant_sigma(&self) -> bool {
        self.constant_sigma
    }

    pub fn sigma(&self, t: f64, x: &Point<D>, u: usize) -> Matrix<D> {
        (self.sigma)(t, x, u)
    }

    pub fn drift(&self, t: f64, x: &Point<D>, u: usize) -> Point<D> {
        (self.drift)(t, x, u)
    }

    /// `a = sigma sigma^T`.
    pub fn diffusion(&self, t: f64, x: &Point<D>, u: usize) -> Matrix<D> {
        let s = self.sigma(t, x, u);
        s * s.transpose()
    }

    /// Stratonovich-corrected drift
    /// `b_i - 1/2 sum_{j,k} d_k sigma_ij sigma_kj`, with central differences.
    pub fn corrected_drift(&self, t: f64, x: &Point<D>, u: usize) -> Point<D> {
        let b = self.drift(t, x, u);
        if self.constant_sigma {
            return b;
        }
        let s = self.sigma(t, x, u);
        let mut corr = Point::<D>::zeros();
        for k in 0..D {
            let mut e = Point::<D>::zeros();
            e[k] = CORRECTION_STEP;
            let ds = (self.sigma(t, &(x + e), u) - self.sigma(t, &(x - e), u)) / (2.0 * CORRECTION_STEP);
            for i in 0..D {
                for j in 0..D {
                    corr[i] += ds[(i, j)] * s[(k, j)];
                }
            }
        }
        b - corr * 0.5
    }

    /// Empirical checks of the declared bounds, Lipschitz constants in `x`
    /// and the support localisation, on samples around `domain`.
    pub fn validate(&self, domain: &DomainModel<D>, t_range: (f64, f64), samples: usize, seed: u64) -> CoefficientReport {
        let mut rng = seeded_rng(seed, 0xC0EF);
        let inner = domain.interior_samples(samples, seed);
        let tube = domain.tube_samples(samples, 3.0 * domain.r0, seed ^ 1);
        let mut sup_sigma: f64 = 0.0;
        let mut sup_drift: f64 = 0.0;
        let mut lip_sigma: f64 = 0.0;
        let mut lip_drift: f64 = 0.0;
        for (x, y) in inner.iter().chain(&tube).zip(tube.iter().chain(&inner)) {
            let t = rng.random_range(t_range.0..=t_range.1);
            let u = rng.random_range(0..self.n_controls);
            let (sx, bx) = (self.sigma(t, x, u), self.drift(t, x, u));
            let (sy, by) = (self.sigma(t, y, u), self.drift(t, y, u));
            sup_sigma = sup_sigma.max(sx.norm());
            sup_drift = sup_drift.max(bx.norm());
            let dxy = (x - y).norm();
            if dxy > 1e-12 {
                lip_sigma = lip_sigma.max((sx - sy).norm() / dxy);
                lip_drift = lip_drift.max((bx - by).norm() / dxy);
            }
        }
        // Localisation: the coefficients vanish beyond distance 3 r0.
        let (lo, hi) = domain.shape().bounds();
        let far = Point::<D>::from_fn(|i, _| hi[i] + 3.5 * domain.r0 + (hi[i] - lo[i]));
        let localized = (0..self.n_controls).all(|u| {
            let t = t_range.0;
            self.sigma(t, &far, u).norm() == 0.0 && self.drift(t, &far, u).norm() == 0.0
        });
        CoefficientReport {
            sigma_bound_ok: sup_sigma <= self.sigma_bound * (1.0 + 1e-12),
            drift_bound_ok: sup_drift <= self.drift_bound * (1.0 + 1e-12),
            sup_sigma,
            sup_drift,
            lipschitz_sigma: lip_sigma,
            lipschitz_drift: lip_drift,
            localized,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoefficientReport {
    pub sigma_bound_ok: bool,
    pub drift_bound_ok: bool,
    pub sup_sigma: f64,
    pub sup_drift: f64,
    pub lipschitz_sigma: f64,
    pub lipschitz_drift: f64,
    /// Whether the coefficients vanish far outside the domain. Constant
    /// coefficients do not; this only matters for states outside `D_{3 r0}`,
    /// which the schemes never visit.
    pub localized: bool,
}

/// Selects a control from time, state and coarse step index.
pub trait ControlLaw<const D: usize>: Sync {
    fn control(&self, k: usize, t: f64, x: &Point<D>) -> usize;
}

/// The same control at all times.
impl<const D: usize> ControlLaw<D> for usize {
    fn control(&self, _k: usize, _t: f64, _x: &Point<D>) -> usize {
        *self
    }
}

/// Piecewise constant control path on the time grid.
#[derive(Debug, Clone)]
pub struct Schedule(pub Vec<usize>);

impl<const D: usize> ControlLaw<D> for Schedule {
    fn control(&self, k: usize, _t: f64, _x: &Point<D>) -> usize {
        self.0[k.min(self.0.len() - 1)]
    }
}

/// State feedback `u = f(t, x)`.
pub struct Feedback<F>(pub F);

impl<const D: usize, F> ControlLaw<D> for Feedback<F>
where
    F: Fn(f64, &Point<D>) -> usize + Sync,
{
    fn control(&self, _k: usize, t: f64, x: &Point<D>) -> usize {
        (self.0)(t, x)
    }
}
