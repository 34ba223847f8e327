//! Sample-based verification of the exterior-sphere, interior-cone and
//! boundary-gradient conditions.

use rayon::prelude::*;
use serde::Serialize;

use super::{DomainModel, NormalCone};
use crate::Point;

/// Margin below which a check fails.
pub const MARGIN_TOL: f64 = -1e-8;

/// Points exhibiting the worst margin of a check.
#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    /// Boundary point.
    pub x: Vec<f64>,
    /// Second point (a point of the closure for the exterior-sphere check).
    pub y: Option<Vec<f64>>,
    /// Normal or cone direction.
    pub z: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionCheck {
    pub passed: bool,
    /// Worst (smallest) margin found; nonnegative margins satisfy the
    /// condition.
    pub margin: f64,
    pub witness: Option<Witness>,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub exterior_sphere: ConditionCheck,
    pub interior_cone: ConditionCheck,
    pub boundary_gradient: ConditionCheck,
    /// Smallest `max_l min_n <l, n>` over the boundary sample.
    pub cone_value: f64,
    pub sup_abs_f: f64,
}

impl ConditionReport {
    pub fn all_passed(&self) -> bool {
        self.exterior_sphere.passed && self.interior_cone.passed && self.boundary_gradient.passed
    }

    pub fn rejection_reason(&self) -> String {
        let mut parts = Vec::new();
        for (name, c) in [
            ("exterior-sphere", &self.exterior_sphere),
            ("interior-cone", &self.interior_cone),
            ("boundary-gradient", &self.boundary_gradient),
        ] {
            if !c.passed {
                let w = c.witness.as_ref().map(describe_witness).unwrap_or_default();
                parts.push(format!("{name} condition fails with margin {:.3e}{w}", c.margin));
            }
        }
        if parts.is_empty() {
            "all conditions pass".to_string()
        } else {
            parts.join("; ")
        }
    }
}

fn describe_witness(w: &Witness) -> String {
    let mut s = format!(" at x={:?}", w.x);
    if let Some(y) = &w.y {
        s.push_str(&format!(", y={y:?}"));
    }
    if let Some(z) = &w.z {
        s.push_str(&format!(", z={z:?}"));
    }
    s
}

fn vec_of<const D: usize>(p: &Point<D>) -> Vec<f64> {
    p.iter().copied().collect()
}

pub(super) fn verify_domain_conditions<const D: usize>(model: &DomainModel<D>, budget: usize) -> ConditionReport {
    let exterior_sphere = check_exterior_sphere(model, budget);
    let (interior_cone, cone_value) = check_interior_cone(model, budget);
    let (boundary_gradient, sup_abs_f) = check_boundary_gradient(model, budget);
    ConditionReport { exterior_sphere, interior_cone, boundary_gradient, cone_value, sup_abs_f }
}

/// `<y - x, z> + |y - x|^2 / (8 r0) >= 0` for boundary `x`, cone normals `z`
/// and `y` in the closure.
fn check_exterior_sphere<const D: usize>(model: &DomainModel<D>, budget: usize) -> ConditionCheck {
    let nx = ((budget as f64).sqrt() as usize).clamp(16, 400);
    let ny = (budget / nx).max(64);
    let shape = model.shape();
    let xs = shape.boundary_points(nx);
    let mut ys = shape.boundary_points(ny / 2);
    ys.extend(model.interior_samples(ny - ny / 2, 0xA5));
    let r0 = model.r0;
    let worst = xs
        .par_iter()
        .map(|x| {
            let cone = NormalCone { rays: shape.normal_rays(x, 1e-9) };
            let mut best = (f64::INFINITY, *x, *x);
            for z in cone.sample(5) {
                for y in &ys {
                    let v = y - x;
                    let m = v.dot(&z) + v.norm_squared() / (8.0 * r0);
                    if m < best.0 {
                        best = (m, *y, z);
                    }
                }
            }
            (best, *x)
        })
        .reduce(
            || ((f64::INFINITY, Point::<D>::zeros(), Point::<D>::zeros()), Point::<D>::zeros()),
            |a, b| if b.0 .0 < a.0 .0 { b } else { a },
        );
    let ((margin, y, z), x) = worst;
    ConditionCheck {
        passed: margin >= MARGIN_TOL,
        margin,
        witness: Some(Witness { x: vec_of(&x), y: Some(vec_of(&y)), z: Some(vec_of(&z)) }),
        samples: xs.len() * ys.len(),
    }
}

/// Normals of boundary points within `radius` of `x`, including sweeps of
/// the corner cones.
fn nearby_normals<const D: usize>(model: &DomainModel<D>, x: &Point<D>, pool: &[Point<D>], radius: f64) -> Vec<Point<D>> {
    let shape = model.shape();
    let mut out = Vec::new();
    for p in pool.iter().filter(|p| (*p - x).norm() <= radius) {
        out.extend(shape.normal_rays(p, 1e-9));
    }
    for c in shape.corners() {
        if (c - x).norm() <= radius {
            out.extend(NormalCone { rays: shape.normal_rays(&c, 1e-9) }.sample(9));
        }
    }
    out
}

/// `max_{|l| = 1} min_n <l, n>` by projected subgradient ascent.
pub fn best_cone_direction<const D: usize>(normals: &[Point<D>]) -> (Point<D>, f64) {
    let value = |l: &Point<D>| normals.iter().map(|n| l.dot(n)).fold(f64::INFINITY, f64::min);
    let mean: Point<D> = normals.iter().sum();
    let mut l = if mean.norm() > 1e-12 { mean.normalize() } else { normals[0] };
    let mut best = (l, value(&l));
    for it in 0..200 {
        let worst = normals.iter().min_by(|a, b| l.dot(a).total_cmp(&l.dot(b))).expect("nonempty");
        let step = 0.5 / (1.0 + it as f64).sqrt();
        let cand = l + worst * step;
        if cand.norm() < 1e-12 {
            break;
        }
        l = cand.normalize();
        let v = value(&l);
        if v > best.1 {
            best = (l, v);
        }
    }
    best
}

pub(super) fn worst_cone_value<const D: usize>(model: &DomainModel<D>, count: usize) -> f64 {
    cone_values(model, count).into_iter().map(|(v, _, _)| v).fold(f64::INFINITY, f64::min)
}

fn cone_values<const D: usize>(model: &DomainModel<D>, count: usize) -> Vec<(f64, Point<D>, Point<D>)> {
    let shape = model.shape();
    let xs = shape.boundary_points(count);
    let pool = shape.boundary_points(count * 2);
    xs.par_iter()
        .map(|x| {
            let normals = nearby_normals(model, x, &pool, model.delta);
            if normals.is_empty() {
                return (f64::NEG_INFINITY, *x, *x);
            }
            let (l, v) = best_cone_direction(&normals);
            (v, *x, l)
        })
        .collect()
}

fn check_interior_cone<const D: usize>(model: &DomainModel<D>, budget: usize) -> (ConditionCheck, f64) {
    let count = (budget / 100).clamp(100, 400);
    let values = cone_values(model, count);
    let (v, x, l) = values
        .iter()
        .copied()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap_or((f64::NEG_INFINITY, Point::<D>::zeros(), Point::<D>::zeros()));
    let margin = v - 1.0 / model.beta;
    let check = ConditionCheck {
        passed: margin >= MARGIN_TOL,
        margin,
        witness: Some(Witness { x: vec_of(&x), y: None, z: Some(vec_of(&l)) }),
        samples: values.len(),
    };
    (check, v)
}

fn check_boundary_gradient<const D: usize>(model: &DomainModel<D>, budget: usize) -> (ConditionCheck, f64) {
    let bound = model.gamma / (8.0 * model.r0);
    let samples = model.boundary_samples(budget.min(20_000), 9);
    let mut worst = (f64::INFINITY, Point::<D>::zeros(), Point::<D>::zeros());
    for s in &samples {
        let g = model.f.gradient(&s.point);
        for n in &s.normals {
            let m = g.dot(n) - bound;
            if m < worst.0 {
                worst = (m, s.point, *n);
            }
        }
    }
    let mut pts = model.interior_samples(budget.min(20_000), 0xC0);
    pts.extend(model.tube_samples(budget.min(20_000), 4.0 * model.r0, 0xC1));
    let sup = pts.iter().map(|x| model.f.value(x).abs()).fold(0.0, f64::max);
    let passed = worst.0 >= MARGIN_TOL && sup <= 1.0;
    let check = ConditionCheck {
        passed,
        margin: worst.0.min(1.0 - sup),
        witness: Some(Witness { x: vec_of(&worst.1), y: None, z: Some(vec_of(&worst.2)) }),
        samples: samples.len() + pts.len(),
    };
    (check, sup)
}
