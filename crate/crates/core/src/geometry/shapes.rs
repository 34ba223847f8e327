//! Closed-form shape primitives.
//!
//! Every shape describes an open bounded set `D` through its closure: a
//! membership test, the nearest point of the boundary, and the extreme rays of
//! the inward normal cone at boundary points.

use std::f64::consts::PI;
use std::fmt::Debug;

use nalgebra::Vector2;

use crate::Point;

/// Points within this distance of the boundary count as boundary points.
pub const BOUNDARY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Interval,
    Disk,
    Box,
    Crescent,
    #[serde(rename = "lshape")]
    LShape,
}

impl std::fmt::Display for DomainKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DomainKind::Interval => "interval",
            DomainKind::Disk => "disk",
            DomainKind::Box => "box",
            DomainKind::Crescent => "crescent",
            DomainKind::LShape => "lshape",
        };
        f.write_str(s)
    }
}

/// Analytic description of a bounded domain in `R^D`.
pub trait Shape<const D: usize>: Send + Sync + Debug {
    fn kind(&self) -> DomainKind;

    /// Membership in the closure, up to [`BOUNDARY_TOL`].
    fn contains(&self, x: &Point<D>) -> bool;

    /// Nearest point of the boundary. For exterior points this is also the
    /// nearest point of the closure.
    fn nearest_boundary_point(&self, x: &Point<D>) -> Point<D>;

    /// Extreme rays of the inward normal cone at `x`: one ray at smooth
    /// points, two (ordered along the boundary) at corners, none off the
    /// boundary.
    fn normal_rays(&self, x: &Point<D>, tol: f64) -> Vec<Point<D>>;

    /// Roughly arclength-uniform boundary sample that always contains the
    /// corners.
    fn boundary_points(&self, count: usize) -> Vec<Point<D>>;

    fn corners(&self) -> Vec<Point<D>>;

    /// Axis-aligned bounding box of the closure.
    fn bounds(&self) -> (Point<D>, Point<D>);

    /// Interior point used as the anchor of the boundary-gradient function.
    fn anchor(&self) -> Point<D>;

    /// Center and radius of a concave circular boundary arc, if any.
    fn concave_arc(&self) -> Option<(Point<D>, f64)> {
        None
    }
}

/// Closed interval `[lo, hi]` on the line.
#[derive(Debug, Clone)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo < hi, "interval needs lo < hi");
        Self { lo, hi }
    }
}

impl Shape<1> for Interval {
    fn kind(&self) -> DomainKind {
        DomainKind::Interval
    }

    fn contains(&self, x: &Point<1>) -> bool {
        x[0] >= self.lo - BOUNDARY_TOL && x[0] <= self.hi + BOUNDARY_TOL
    }

    fn nearest_boundary_point(&self, x: &Point<1>) -> Point<1> {
        if (x[0] - self.lo).abs() <= (x[0] - self.hi).abs() {
            Point::<1>::new(self.lo)
        } else {
            Point::<1>::new(self.hi)
        }
    }

    fn normal_rays(&self, x: &Point<1>, tol: f64) -> Vec<Point<1>> {
        if (x[0] - self.lo).abs() <= tol {
            vec![Point::<1>::new(1.0)]
        } else if (x[0] - self.hi).abs() <= tol {
            vec![Point::<1>::new(-1.0)]
        } else {
            Vec::new()
        }
    }

    fn boundary_points(&self, _count: usize) -> Vec<Point<1>> {
        vec![Point::<1>::new(self.lo), Point::<1>::new(self.hi)]
    }

    fn corners(&self) -> Vec<Point<1>> {
        Vec::new()
    }

    fn bounds(&self) -> (Point<1>, Point<1>) {
        (Point::<1>::new(self.lo), Point::<1>::new(self.hi))
    }

    fn anchor(&self) -> Point<1> {
        Point::<1>::new(0.5 * (self.lo + self.hi))
    }
}

#[derive(Debug, Clone)]
pub struct Disk {
    pub center: Vector2<f64>,
    pub radius: f64,
}

impl Disk {
    pub fn new(center: [f64; 2], radius: f64) -> Self {
        assert!(radius > 0.0, "disk radius must be positive");
        Self { center: Vector2::new(center[0], center[1]), radius }
    }
}

fn radial_point(center: &Vector2<f64>, radius: f64, x: &Vector2<f64>) -> Vector2<f64> {
    let v = x - center;
    let r = v.norm();
    if r < 1e-300 {
        center + Vector2::new(radius, 0.0)
    } else {
        center + v * (radius / r)
    }
}

impl Shape<2> for Disk {
    fn kind(&self) -> DomainKind {
        DomainKind::Disk
    }

    fn contains(&self, x: &Point<2>) -> bool {
        (x - self.center).norm() <= self.radius + BOUNDARY_TOL
    }

    fn nearest_boundary_point(&self, x: &Point<2>) -> Point<2> {
        radial_point(&self.center, self.radius, x)
    }

    fn normal_rays(&self, x: &Point<2>, tol: f64) -> Vec<Point<2>> {
        let v = x - self.center;
        if (v.norm() - self.radius).abs() <= tol {
            vec![-v / v.norm()]
        } else {
            Vec::new()
        }
    }

    fn boundary_points(&self, count: usize) -> Vec<Point<2>> {
        let count = count.max(4);
        (0..count)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / count as f64;
                self.center + self.radius * Vector2::new(a.cos(), a.sin())
            })
            .collect()
    }

    fn corners(&self) -> Vec<Point<2>> {
        Vec::new()
    }

    fn bounds(&self) -> (Point<2>, Point<2>) {
        let r = Vector2::new(self.radius, self.radius);
        (self.center - r, self.center + r)
    }

    fn anchor(&self) -> Point<2> {
        self.center
    }
}

/// Simple polygon with vertices listed counter-clockwise. Used for the box and
/// the L-shape.
#[derive(Debug, Clone)]
pub struct Polygon {
    kind: DomainKind,
    vertices: Vec<Vector2<f64>>,
    anchor: Vector2<f64>,
}

impl Polygon {
    /// Axis-aligned box `[lo, hi]`.
    pub fn rect(lo: [f64; 2], hi: [f64; 2]) -> Self {
        assert!(lo[0] < hi[0] && lo[1] < hi[1], "box needs lo < hi");
        let vertices = vec![
            Vector2::new(lo[0], lo[1]),
            Vector2::new(hi[0], lo[1]),
            Vector2::new(hi[0], hi[1]),
            Vector2::new(lo[0], hi[1]),
        ];
        let anchor = Vector2::new(0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]));
        Self { kind: DomainKind::Box, vertices, anchor }
    }

    /// Box `[lo, hi]` with the top-right `notch` rectangle removed. The
    /// notch's lower-left vertex is a reentrant corner.
    pub fn lshape(lo: [f64; 2], hi: [f64; 2], notch: [f64; 2]) -> Self {
        assert!(lo[0] < hi[0] && lo[1] < hi[1], "L-shape needs lo < hi");
        assert!(
            notch[0] > 0.0 && notch[1] > 0.0 && notch[0] < hi[0] - lo[0] && notch[1] < hi[1] - lo[1],
            "notch must be strictly inside the box"
        );
        let (xm, ym) = (hi[0] - notch[0], hi[1] - notch[1]);
        let vertices = vec![
            Vector2::new(lo[0], lo[1]),
            Vector2::new(hi[0], lo[1]),
            Vector2::new(hi[0], ym),
            Vector2::new(xm, ym),
            Vector2::new(xm, hi[1]),
            Vector2::new(lo[0], hi[1]),
        ];
        let anchor = Vector2::new(0.5 * (lo[0] + xm), 0.5 * (lo[1] + ym));
        Self { kind: DomainKind::LShape, vertices, anchor }
    }

    fn edge(&self, i: usize) -> (Vector2<f64>, Vector2<f64>) {
        let n = self.vertices.len();
        (self.vertices[i], self.vertices[(i + 1) % n])
    }

    fn edge_normal(&self, i: usize) -> Vector2<f64> {
        let (a, b) = self.edge(i);
        let d = (b - a).normalize();
        Vector2::new(-d.y, d.x)
    }

    fn closest_on_edge(&self, i: usize, x: &Vector2<f64>) -> Vector2<f64> {
        let (a, b) = self.edge(i);
        let d = b - a;
        let s = ((x - a).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
        a + d * s
    }

    fn inside_strict(&self, x: &Vector2<f64>) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        for i in 0..n {
            let (a, b) = self.edge(i);
            if (a.y > x.y) != (b.y > x.y) {
                let xc = a.x + (x.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if x.x < xc {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

impl Shape<2> for Polygon {
    fn kind(&self) -> DomainKind {
        self.kind
    }

    fn contains(&self, x: &Point<2>) -> bool {
        if self.inside_strict(x) {
            return true;
        }
        (x - self.nearest_boundary_point(x)).norm() <= BOUNDARY_TOL
    }

    fn nearest_boundary_point(&self, x: &Point<2>) -> Point<2> {
        let mut best = self.vertices[0];
        let mut best_d = f64::INFINITY;
        for i in 0..self.vertices.len() {
            let p = self.closest_on_edge(i, x);
            let d = (x - p).norm_squared();
            if d < best_d {
                best_d = d;
                best = p;
            }
        }
        best
    }

    fn normal_rays(&self, x: &Point<2>, tol: f64) -> Vec<Point<2>> {
        let n = self.vertices.len();
        let hits: Vec<usize> = (0..n).filter(|&i| (x - self.closest_on_edge(i, x)).norm() <= tol).collect();
        match hits.as_slice() {
            [] => Vec::new(),
            [i] => vec![self.edge_normal(*i)],
            [i, j] => {
                // Order so that the incoming edge comes first.
                if (i + 1) % n == *j {
                    vec![self.edge_normal(*i), self.edge_normal(*j)]
                } else {
                    vec![self.edge_normal(*j), self.edge_normal(*i)]
                }
            }
            _ => hits.iter().map(|&i| self.edge_normal(i)).collect(),
        }
    }

    fn boundary_points(&self, count: usize) -> Vec<Point<2>> {
        let n = self.vertices.len();
        let perimeter: f64 = (0..n).map(|i| {
            let (a, b) = self.edge(i);
            (b - a).norm()
        }).sum();
        let mut out = Vec::with_capacity(count + n);
        for i in 0..n {
            let (a, b) = self.edge(i);
            let m = ((count as f64 * (b - a).norm() / perimeter).round() as usize).max(1);
            for k in 0..m {
                out.push(a + (b - a) * (k as f64 / m as f64));
            }
        }
        out
    }

    fn corners(&self) -> Vec<Point<2>> {
        self.vertices.clone()
    }

    fn bounds(&self) -> (Point<2>, Point<2>) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    fn anchor(&self) -> Point<2> {
        self.anchor
    }
}

/// Disk `B(outer_center, outer_radius)` minus the closed disk
/// `B(inner_center, inner_radius)`. The two circles must cross, which leaves
/// two convex corners joined by a convex outer arc and a concave inner arc.
#[derive(Debug, Clone)]
pub struct Crescent {
    pub outer_center: Vector2<f64>,
    pub outer_radius: f64,
    pub inner_center: Vector2<f64>,
    pub inner_radius: f64,
    corners: [Vector2<f64>; 2],
}

impl Crescent {
    pub fn new(outer_center: [f64; 2], outer_radius: f64, inner_center: [f64; 2], inner_radius: f64) -> Self {
        let c1 = Vector2::new(outer_center[0], outer_center[1]);
        let c2 = Vector2::new(inner_center[0], inner_center[1]);
        let l = (c2 - c1).norm();
        assert!(
            l < outer_radius + inner_radius && l > (outer_radius - inner_radius).abs(),
            "crescent circles must cross"
        );
        let axis = (c2 - c1) / l;
        let perp = Vector2::new(-axis.y, axis.x);
        // Chord position along the axis and half-chord length.
        let a = (outer_radius * outer_radius - inner_radius * inner_radius + l * l) / (2.0 * l);
        let h = (outer_radius * outer_radius - a * a).sqrt();
        let base = c1 + axis * a;
        let corners = [base - perp * h, base + perp * h];
        Self { outer_center: c1, outer_radius, inner_center: c2, inner_radius, corners }
    }

    fn on_outer_arc(&self, p: &Vector2<f64>) -> bool {
        (p - self.inner_center).norm() >= self.inner_radius - BOUNDARY_TOL
    }

    fn on_inner_arc(&self, p: &Vector2<f64>) -> bool {
        (p - self.outer_center).norm() <= self.outer_radius + BOUNDARY_TOL
    }

    /// Angular parametrisation `(center, radius, start, sweep)` of the outer
    /// and inner arcs, both running counter-clockwise.
    fn arcs(&self) -> [(Vector2<f64>, f64, f64, f64); 2] {
        let ang = |c: &Vector2<f64>, p: &Vector2<f64>| (p.y - c.y).atan2(p.x - c.x);
        let [p0, p1] = self.corners;
        // Outer arc: from p1 counter-clockwise to p0, avoiding the inner disk.
        let s_out = ang(&self.outer_center, &p1);
        let mut e_out = ang(&self.outer_center, &p0);
        while e_out <= s_out {
            e_out += 2.0 * PI;
        }
        // Inner arc: inside the outer disk, running from p0 to p1 around the
        // inner center on the side facing the outer center.
        let s_in = ang(&self.inner_center, &p0);
        let mut e_in = ang(&self.inner_center, &p1);
        while e_in >= s_in {
            e_in -= 2.0 * PI;
        }
        let mid_in = self.inner_center
            + self.inner_radius * Vector2::new((0.5 * (s_in + e_in)).cos(), (0.5 * (s_in + e_in)).sin());
        let (s_in, e_in) = if self.on_inner_arc(&mid_in) {
            (s_in, e_in)
        } else {
            (s_in, e_in + 2.0 * PI)
        };
        [
            (self.outer_center, self.outer_radius, s_out, e_out - s_out),
            (self.inner_center, self.inner_radius, s_in, e_in - s_in),
        ]
    }
}

impl Shape<2> for Crescent {
    fn kind(&self) -> DomainKind {
        DomainKind::Crescent
    }

    fn contains(&self, x: &Point<2>) -> bool {
        (x - self.outer_center).norm() <= self.outer_radius + BOUNDARY_TOL
            && (x - self.inner_center).norm() >= self.inner_radius - BOUNDARY_TOL
    }

    fn nearest_boundary_point(&self, x: &Point<2>) -> Point<2> {
        let mut candidates = Vec::with_capacity(4);
        let po = radial_point(&self.outer_center, self.outer_radius, x);
        if self.on_outer_arc(&po) {
            candidates.push(po);
        }
        let pi = radial_point(&self.inner_center, self.inner_radius, x);
        if self.on_inner_arc(&pi) {
            candidates.push(pi);
        }
        candidates.extend_from_slice(&self.corners);
        candidates
            .into_iter()
            .min_by(|a, b| (x - a).norm_squared().total_cmp(&(x - b).norm_squared()))
            .expect("corners are always candidates")
    }

    fn normal_rays(&self, x: &Point<2>, tol: f64) -> Vec<Point<2>> {
        let mut rays = Vec::with_capacity(2);
        let ro = (x - self.outer_center).norm();
        if (ro - self.outer_radius).abs() <= tol && self.on_outer_arc(x) {
            rays.push((self.outer_center - x) / ro);
        }
        let ri = (x - self.inner_center).norm();
        if (ri - self.inner_radius).abs() <= tol && self.on_inner_arc(x) {
            rays.push((x - self.inner_center) / ri);
        }
        rays
    }

    fn boundary_points(&self, count: usize) -> Vec<Point<2>> {
        let arcs = self.arcs();
        let total: f64 = arcs.iter().map(|(_, r, _, sweep)| r * sweep.abs()).sum();
        let mut out = Vec::with_capacity(count + 2);
        for (c, r, start, sweep) in arcs {
            let m = ((count as f64 * r * sweep.abs() / total).round() as usize).max(2);
            for k in 0..m {
                let a = start + sweep * k as f64 / m as f64;
                out.push(c + r * Vector2::new(a.cos(), a.sin()));
            }
        }
        // Arc starts are p1 (outer) and p0 (inner); snap them onto the exact
        // corners so corner detection is not at the mercy of rounding.
        for p in out.iter_mut() {
            for c in &self.corners {
                if (*p - c).norm() < 1e-9 {
                    *p = *c;
                }
            }
        }
        out
    }

    fn corners(&self) -> Vec<Point<2>> {
        self.corners.to_vec()
    }

    fn bounds(&self) -> (Point<2>, Point<2>) {
        let r = Vector2::new(self.outer_radius, self.outer_radius);
        (self.outer_center - r, self.outer_center + r)
    }

    fn anchor(&self) -> Point<2> {
        // Point of the outer circle farthest from the inner center, pulled
        // halfway back towards the outer center.
        let away = (self.outer_center - self.inner_center).normalize();
        self.outer_center + away * (0.5 * self.outer_radius)
    }

    fn concave_arc(&self) -> Option<(Point<2>, f64)> {
        Some((self.inner_center, self.inner_radius))
    }
}
