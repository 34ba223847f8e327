//! Domains, projections and normal cones.
//!
//! A [`DomainModel`] pairs an analytic [`Shape`] with the constants the
//! theory attaches to it:
//!
//! * `r0`: exterior-sphere constant. Every boundary point `x` and inward unit
//!   normal `n` admit the exterior ball `B(x - 4 r0 n, 4 r0)`, which is
//!   equivalent to `<y - x, n> >= -|y - x|^2 / (8 r0)` for all `y` in the
//!   closure.
//! * `delta`, `beta`: uniform interior cone. Near every boundary point there is
//!   a unit `l` with `<l, n> >= 1 / beta` for all normals within distance
//!   `delta`.
//! * `gamma` and the function `f`: `Df(x) . n >= gamma / (8 r0)` on the
//!   boundary with `sup |f| <= 1`.
//! * `lipschitz_pi`: Lipschitz constant of the projection on the tube.
//!
//! Constants that are not supplied are derived numerically by
//! [`DomainBuilder::build`]. Use [`DomainModel::verify`] to obtain a
//! [`VerifiedDomain`], which the simulation modules require.

mod shapes;
mod verify;

use std::ops::Deref;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

pub use shapes::{Crescent, Disk, DomainKind, Interval, Polygon, Shape, BOUNDARY_TOL};
pub use verify::{best_cone_direction, ConditionCheck, ConditionReport, Witness, MARGIN_TOL};

use crate::paths::seeded_rng;
use crate::Point;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("point at distance {distance} lies outside the projection tube of width 4*r0 = {tube}")]
    OutOfTube { distance: f64, tube: f64 },
    #[error("point is not on the boundary (distance to boundary {distance})")]
    NotOnBoundary { distance: f64 },
    #[error("invalid domain parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("could not derive {what}: {reason}")]
    Derivation { what: &'static str, reason: String },
    #[error("domain rejected: {0}")]
    Rejected(String),
}

/// Inward normal cone at a boundary point, stored through its extreme rays.
#[derive(Debug, Clone)]
pub struct NormalCone<const D: usize> {
    pub rays: Vec<Point<D>>,
}

impl<const D: usize> NormalCone<D> {
    /// Opening angle between the extreme rays (0 at smooth points).
    pub fn width(&self) -> f64 {
        match self.rays.as_slice() {
            [a, b] => a.dot(b).clamp(-1.0, 1.0).acos(),
            _ => 0.0,
        }
    }

    pub fn is_corner(&self) -> bool {
        self.width() > 1e-6
    }

    /// `k` unit normals sweeping the cone; the first and last are the
    /// extreme rays.
    pub fn sample(&self, k: usize) -> Vec<Point<D>> {
        match self.rays.as_slice() {
            [] => Vec::new(),
            [a] => vec![*a; k],
            [a, b] if k >= 2 => (0..k).map(|i| slerp(a, b, i as f64 / (k - 1) as f64)).collect(),
            [a, _] => vec![*a; k],
            many => many.to_vec(),
        }
    }

    /// Angle between the unit vector `v` and the cone (0 inside).
    pub fn angle_to(&self, v: &Point<D>) -> f64 {
        let ang = |a: &Point<D>| a.dot(v).clamp(-1.0, 1.0).acos();
        match self.rays.as_slice() {
            [] => std::f64::consts::PI,
            [a] => ang(a),
            [a, b] => {
                let (ta, tb) = (ang(a), ang(b));
                if ta + tb <= self.width() + 1e-9 {
                    0.0
                } else {
                    ta.min(tb)
                }
            }
            many => many.iter().map(ang).fold(f64::INFINITY, f64::min),
        }
    }
}

fn slerp<const D: usize>(a: &Point<D>, b: &Point<D>, t: f64) -> Point<D> {
    let om = a.dot(b).clamp(-1.0, 1.0).acos();
    if om < 1e-12 {
        return *a;
    }
    let v = (a * ((1.0 - t) * om).sin() + b * (t * om).sin()) / om.sin();
    v.normalize()
}

/// Boundary point together with samples of its normal cone.
#[derive(Debug, Clone)]
pub struct BoundarySample<const D: usize> {
    pub point: Point<D>,
    pub normals: Vec<Point<D>>,
    pub is_corner: bool,
}

/// Smooth bounded function used for the boundary-gradient condition.
#[derive(Debug, Clone)]
pub enum ConditionFunction<const D: usize> {
    /// `f(x) = tanh(-|x - anchor|^2 / scale)`.
    Radial { anchor: Point<D>, scale: f64 },
    /// `f(x) = tanh(raw(x) / scale)` with
    /// `raw(x) = -|x - attract|^2 - weight * tau * exp(-|x - repel|^2 / tau)`:
    /// increases towards `attract` and away from `repel`.
    TwoCenter { attract: Point<D>, repel: Point<D>, weight: f64, tau: f64, scale: f64 },
}

impl<const D: usize> ConditionFunction<D> {
    fn raw(&self, x: &Point<D>) -> (f64, Point<D>) {
        match self {
            ConditionFunction::Radial { anchor, .. } => {
                let v = x - anchor;
                (-v.norm_squared(), -2.0 * v)
            }
            ConditionFunction::TwoCenter { attract, repel, weight, tau, .. } => {
                let va = x - attract;
                let vr = x - repel;
                let e = (-vr.norm_squared() / tau).exp();
                (-va.norm_squared() - weight * tau * e, -2.0 * va + vr * (2.0 * weight * e))
            }
        }
    }

    fn scale(&self) -> f64 {
        match self {
            ConditionFunction::Radial { scale, .. } | ConditionFunction::TwoCenter { scale, .. } => *scale,
        }
    }

    fn with_scale(mut self, s: f64) -> Self {
        match &mut self {
            ConditionFunction::Radial { scale, .. } | ConditionFunction::TwoCenter { scale, .. } => *scale = s,
        }
        self
    }

    pub fn value(&self, x: &Point<D>) -> f64 {
        (self.raw(x).0 / self.scale()).tanh()
    }

    pub fn gradient(&self, x: &Point<D>) -> Point<D> {
        let (r, g) = self.raw(x);
        let s = self.scale();
        let sech = 1.0 / (r / s).cosh();
        g * (sech * sech / s)
    }
}

/// Analytic domain plus its structural constants. Cheap to clone.
#[derive(Debug, Clone)]
pub struct DomainModel<const D: usize> {
    shape: Arc<dyn Shape<D>>,
    pub r0: f64,
    pub delta: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lipschitz_pi: f64,
    pub f: ConditionFunction<D>,
}

impl DomainModel<1> {
    pub fn interval(lo: f64, hi: f64) -> DomainBuilder<1> {
        DomainBuilder::new(Interval::new(lo, hi))
    }
}

impl DomainModel<2> {
    pub fn disk(center: [f64; 2], radius: f64) -> DomainBuilder<2> {
        DomainBuilder::new(Disk::new(center, radius))
    }

    pub fn rect(lo: [f64; 2], hi: [f64; 2]) -> DomainBuilder<2> {
        DomainBuilder::new(Polygon::rect(lo, hi))
    }

    pub fn crescent(outer_center: [f64; 2], outer_radius: f64, inner_center: [f64; 2], inner_radius: f64) -> DomainBuilder<2> {
        DomainBuilder::new(Crescent::new(outer_center, outer_radius, inner_center, inner_radius))
    }

    pub fn lshape(lo: [f64; 2], hi: [f64; 2], notch: [f64; 2]) -> DomainBuilder<2> {
        DomainBuilder::new(Polygon::lshape(lo, hi, notch))
    }
}

impl<const D: usize> DomainModel<D> {
    pub fn kind(&self) -> DomainKind {
        self.shape.kind()
    }

    pub fn shape(&self) -> &dyn Shape<D> {
        self.shape.as_ref()
    }

    pub fn contains(&self, x: &Point<D>) -> bool {
        self.shape.contains(x)
    }

    /// Euclidean distance to the closed domain; zero inside.
    pub fn distance(&self, x: &Point<D>) -> f64 {
        if self.shape.contains(x) {
            0.0
        } else {
            (x - self.shape.nearest_boundary_point(x)).norm()
        }
    }

    /// Distance to the boundary, for points inside or outside.
    pub fn boundary_distance(&self, x: &Point<D>) -> f64 {
        (x - self.shape.nearest_boundary_point(x)).norm()
    }

    /// Closest point of the closed domain, defined everywhere (but unique
    /// only within the tube of width `4 r0`).
    pub fn closest_point(&self, x: &Point<D>) -> Point<D> {
        if self.shape.contains(x) {
            *x
        } else {
            self.shape.nearest_boundary_point(x)
        }
    }

    /// Projection onto the closed domain, restricted to the uniqueness tube.
    pub fn project(&self, x: &Point<D>) -> Result<Point<D>, GeometryError> {
        let d = self.distance(x);
        if d >= 4.0 * self.r0 {
            return Err(GeometryError::OutOfTube { distance: d, tube: 4.0 * self.r0 });
        }
        Ok(self.closest_point(x))
    }

    /// Normal cone at a boundary point.
    pub fn normal_cone(&self, x: &Point<D>) -> Result<NormalCone<D>, GeometryError> {
        let db = self.boundary_distance(x);
        if db > BOUNDARY_TOL || !self.shape.contains(x) {
            return Err(GeometryError::NotOnBoundary { distance: db });
        }
        let rays = self.shape.normal_rays(x, 1e-9);
        if rays.is_empty() {
            return Err(GeometryError::NotOnBoundary { distance: db });
        }
        Ok(NormalCone { rays })
    }

    /// `k` inward unit normals sampled from the cone at `x`.
    pub fn normal_cone_sample(&self, x: &Point<D>, k: usize) -> Result<Vec<Point<D>>, GeometryError> {
        Ok(self.normal_cone(x)?.sample(k))
    }

    /// Normals pooled from the cone at the boundary point nearest to `x` and
    /// from boundary points within `radius` of it.
    pub fn pooled_normals(&self, x: &Point<D>, radius: f64, k: usize) -> Vec<Point<D>> {
        let p = self.shape.nearest_boundary_point(x);
        let mut out = self.shape.normal_rays(&p, 1e-9);
        if out.len() == 2 {
            out = NormalCone { rays: out }.sample(k);
        }
        if radius > 0.0 {
            for c in self.shape.corners() {
                if (c - p).norm() <= radius {
                    out.extend(NormalCone { rays: self.shape.normal_rays(&c, 1e-9) }.sample(k));
                }
            }
            // Nearby smooth points on either side.
            for e in 0..D {
                for s in [-1.0, 1.0] {
                    let mut q = p;
                    q[e] += s * radius;
                    let qb = self.shape.nearest_boundary_point(&q);
                    if (qb - p).norm() <= radius * 1.5 {
                        out.extend(self.shape.normal_rays(&qb, 1e-9));
                    }
                }
            }
        }
        out
    }

    pub fn boundary_samples(&self, count: usize, k: usize) -> Vec<BoundarySample<D>> {
        self.shape
            .boundary_points(count)
            .into_iter()
            .filter_map(|p| {
                let cone = NormalCone { rays: self.shape.normal_rays(&p, 1e-9) };
                if cone.rays.is_empty() {
                    return None;
                }
                Some(BoundarySample { point: p, normals: cone.sample(k), is_corner: cone.is_corner() })
            })
            .collect()
    }

    /// Uniform samples of the closed domain (rejection from the bounding box).
    pub fn interior_samples(&self, count: usize, seed: u64) -> Vec<Point<D>> {
        let (lo, hi) = self.shape.bounds();
        let mut rng = seeded_rng(seed, 0x1A7E);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let x = Point::<D>::from_fn(|i, _| rng.random_range(lo[i]..=hi[i]));
            if self.shape.contains(&x) {
                out.push(x);
            }
        }
        out
    }

    /// Samples of the exterior tube `{0 < d(x, D) < width}`.
    pub fn tube_samples(&self, count: usize, width: f64, seed: u64) -> Vec<Point<D>> {
        let (lo, hi) = self.shape.bounds();
        let mut rng = seeded_rng(seed, 0x70BE);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let x = Point::<D>::from_fn(|i, _| rng.random_range(lo[i] - width..=hi[i] + width));
            let d = self.distance(&x);
            if d > 0.0 && d < width {
                out.push(x);
            }
        }
        out
    }

    /// Radius of the stopping tube around the domain for a driving path whose
    /// sup-norm on `[s, t]` is `z_sup`.
    pub fn tube_epsilon(&self, z_sup: f64) -> f64 {
        tube_epsilon(self.delta, self.beta, self.lipschitz_pi, self.r0, z_sup)
    }

    /// Numerically checks the exterior-sphere, interior-cone and
    /// boundary-gradient conditions; failures are reported, not raised.
    pub fn verify_conditions(&self, sample_budget: usize) -> ConditionReport {
        verify::verify_domain_conditions(self, sample_budget.max(1000))
    }

    /// Verifies the conditions and wraps the domain for simulation use.
    pub fn verify(self, sample_budget: usize) -> Result<VerifiedDomain<D>, GeometryError> {
        let report = self.verify_conditions(sample_budget);
        if !(report.exterior_sphere.passed && report.interior_cone.passed) {
            return Err(GeometryError::Rejected(report.rejection_reason()));
        }
        Ok(VerifiedDomain { model: self, report })
    }
}

/// `min(delta / (8 (1 + 4 beta + beta^2 exp{(beta l^2 / r0)(z_sup + delta)})), r0)`.
pub fn tube_epsilon(delta: f64, beta: f64, lipschitz_pi: f64, r0: f64, z_sup: f64) -> f64 {
    let growth = (beta * lipschitz_pi * lipschitz_pi / r0 * (z_sup + delta)).exp();
    (delta / (8.0 * (1.0 + 4.0 * beta + beta * beta * growth))).min(r0)
}

/// A domain whose exterior-sphere and interior-cone conditions passed the
/// numerical verifier. Dereferences to [`DomainModel`].
#[derive(Debug, Clone)]
pub struct VerifiedDomain<const D: usize> {
    model: DomainModel<D>,
    report: ConditionReport,
}

impl<const D: usize> VerifiedDomain<D> {
    pub fn report(&self) -> &ConditionReport {
        &self.report
    }

    pub fn model(&self) -> &DomainModel<D> {
        &self.model
    }
}

impl<const D: usize> Deref for VerifiedDomain<D> {
    type Target = DomainModel<D>;

    fn deref(&self) -> &DomainModel<D> {
        &self.model
    }
}

/// Builds a [`DomainModel`], deriving any constant that is not supplied.
#[derive(Debug, Clone)]
pub struct DomainBuilder<const D: usize> {
    shape: Arc<dyn Shape<D>>,
    r0: Option<f64>,
    delta: Option<f64>,
    beta: Option<f64>,
}

impl<const D: usize> DomainBuilder<D> {
    pub fn new(shape: impl Shape<D> + 'static) -> Self {
        Self { shape: Arc::new(shape), r0: None, delta: None, beta: None }
    }

    pub fn r0(mut self, r0: f64) -> Self {
        self.r0 = Some(r0);
        self
    }

    pub fn delta(mut self, delta: f64) -> Self {
        self.delta = Some(delta);
        self
    }

    pub fn beta(mut self, beta: f64) -> Self {
        self.beta = Some(beta);
        self
    }

    pub fn build(self) -> Result<DomainModel<D>, GeometryError> {
        let shape = self.shape;
        let r0 = match self.r0 {
            Some(r) if r > 0.0 && r.is_finite() => r,
            Some(r) => return Err(GeometryError::InvalidParameter { name: "r0", reason: format!("{r} is not positive") }),
            None => derive_r0(shape.as_ref())?,
        };
        let delta = match self.delta {
            Some(d) if d > 0.0 => d,
            Some(d) => return Err(GeometryError::InvalidParameter { name: "delta", reason: format!("{d} is not positive") }),
            None => r0,
        };
        if let Some(b) = self.beta {
            if b < 1.0 {
                return Err(GeometryError::InvalidParameter { name: "beta", reason: format!("{b} < 1") });
            }
        }
        let mut model = DomainModel {
            shape,
            r0,
            delta,
            beta: self.beta.unwrap_or(1.0),
            gamma: 1.0,
            lipschitz_pi: 1.0,
            f: ConditionFunction::Radial { anchor: Point::<D>::zeros(), scale: 1.0 },
        };
        model.lipschitz_pi = estimate_projection_lipschitz(&model, 100_000);
        let (f, worst) = choose_condition_function(&model);
        if worst <= 0.0 {
            return Err(GeometryError::Derivation {
                what: "boundary-gradient function",
                reason: format!("best candidate has boundary margin {worst:.3e}"),
            });
        }
        model.f = f;
        model.gamma = 0.9 * worst * 8.0 * r0;
        if self.beta.is_none() {
            let worst_cone = verify::worst_cone_value(&model, 300);
            if worst_cone <= 0.0 {
                return Err(GeometryError::Derivation {
                    what: "beta",
                    reason: format!("no uniform interior cone (best value {worst_cone:.3e})"),
                });
            }
            model.beta = (1.05 / worst_cone).max(1.0);
        }
        Ok(model)
    }
}

/// Largest `r0` for which the exterior-ball inequality holds on a boundary
/// sample, shrunk by 1% and capped at a quarter of the smallest bounding-box
/// side (convex shapes admit any radius).
fn derive_r0<const D: usize>(shape: &dyn Shape<D>) -> Result<f64, GeometryError> {
    let (lo, hi) = shape.bounds();
    let cap = 0.25 * (hi - lo).min();
    let xs = shape.boundary_points(400);
    let ys = shape.boundary_points(2000);
    let worst = xs
        .par_iter()
        .map(|x| {
            let cone = NormalCone { rays: shape.normal_rays(x, 1e-9) };
            let mut best = f64::INFINITY;
            for z in cone.sample(5) {
                for y in &ys {
                    let v = y - x;
                    let ip = v.dot(&z);
                    if ip < 0.0 {
                        best = best.min(v.norm_squared() / (-8.0 * ip));
                    }
                }
            }
            best
        })
        .reduce(|| f64::INFINITY, f64::min);
    let r0 = (0.99 * worst).min(cap);
    if r0 < 1e-3 * cap {
        return Err(GeometryError::Derivation {
            what: "r0",
            reason: format!("exterior-ball radius collapses to {r0:.3e}; supply r0 explicitly"),
        });
    }
    Ok(r0)
}

fn estimate_projection_lipschitz<const D: usize>(model: &DomainModel<D>, pairs: usize) -> f64 {
    let width = 2.0 * model.r0;
    let xs = model.tube_samples(pairs, width, 0x11B5);
    let mut rng = seeded_rng(0x11B5, 7);
    let mut worst: f64 = 1.0;
    for x in xs {
        let scale = 10f64.powf(rng.random_range(-4.0..-1.0));
        let y = x + Point::<D>::from_fn(|_, _| rng.random_range(-1.0..1.0)) * scale;
        let dy = model.distance(&y);
        if dy <= 0.0 || dy >= width {
            continue;
        }
        let ratio = (model.closest_point(&x) - model.closest_point(&y)).norm() / (x - y).norm();
        worst = worst.max(ratio);
    }
    1.05 * worst
}

/// Minimum of `Df . n` over a boundary sample.
fn boundary_gradient_margin<const D: usize>(f: &ConditionFunction<D>, samples: &[BoundarySample<D>]) -> f64 {
    samples
        .iter()
        .flat_map(|s| s.normals.iter().map(move |n| f.gradient(&s.point).dot(n)))
        .fold(f64::INFINITY, f64::min)
}

fn choose_condition_function<const D: usize>(model: &DomainModel<D>) -> (ConditionFunction<D>, f64) {
    let shape = model.shape.as_ref();
    let (lo, hi) = shape.bounds();
    let pad = Point::<D>::repeat(4.0 * model.r0);
    let corners_of_region = [lo - pad, hi + pad];
    let samples = model.boundary_samples(400, 5);
    // Scale so that tanh's argument stays in [-1, 1] on the padded bounding
    // box (its corners maximise |raw| for both families below).
    let max_raw = |f: &ConditionFunction<D>| {
        (0..(1usize << D))
            .map(|mask| {
                let x = Point::<D>::from_fn(|i, _| corners_of_region[(mask >> i) & 1][i]);
                f.raw(&x).0.abs()
            })
            .fold(1e-12, f64::max)
    };
    let finish = |f: ConditionFunction<D>| {
        let s = max_raw(&f);
        let f = f.with_scale(s);
        let m = boundary_gradient_margin(&f, &samples);
        (f, m)
    };

    match shape.concave_arc() {
        // Attract towards the bounding-box center, repel from the concave
        // arc's center.
        Some((repel, radius)) => {
            let attract = (lo + hi) * 0.5;
            let tau = radius * radius;
            (0..60)
                .map(|i| {
                    let weight = 0.05 * 1.15f64.powi(i);
                    finish(ConditionFunction::TwoCenter { attract, repel, weight, tau, scale: 1.0 })
                })
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .expect("non-empty ladder")
        }
        None => finish(ConditionFunction::Radial { anchor: shape.anchor(), scale: 1.0 }),
    }
}
