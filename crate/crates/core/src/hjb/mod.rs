//! Hamiltonian, normal-cone boundary operators and finite-difference
//! viscosity certificates for the Neumann HJB equation
//!
//! ```text
//! -V_t + H(t, x, V, DV, D^2 V) = 0,   H = max_u { -1/2 tr(a Q) - <b, q> - g }
//! ```
//!
//! with boundary operators `N^-(q) = inf_n <q, -n>` and `N^+(q) = sup_n <q, -n>`
//! over the inward normal cone.
//!
//! ```
//! use rsde::control::ControlProblem;
//! use rsde::hjb::HamiltonianSpec;
//! use rsde::{Coefficients, Matrix, Point};
//!
//! let coeffs = Coefficients::constant(Matrix::<2>::identity(), Point::<2>::zeros());
//! let problem = ControlProblem::new(coeffs, |_, _, _| 0.0, |_| 0.0, 1.0);
//! let spec = HamiltonianSpec::parabolic(&problem);
//! let (h, _) = spec.hamiltonian(0.0, &Point::<2>::zeros(), 0.0, &Point::<2>::zeros(), &Matrix::<2>::identity());
//! assert_eq!(h, -1.0);
//! ```

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::control::{ControlProblem, ValueGrid};
use crate::geometry::{DomainModel, GeometryError};
use crate::paths::seeded_rng;
use crate::penalty::PenaltyField;
use crate::{Matrix, Point};

#[derive(Debug, Error)]
pub enum HjbError {
    #[error("central stencil at {x:?} leaves the domain (boundary distance {distance} < {needed})")]
    StencilOutsideDomain { x: Vec<f64>, distance: f64, needed: f64 },
    #[error("comparison needs a passing {side} certificate")]
    CertificateMissing { side: &'static str },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Which inequality of the viscosity definition is checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Sub,
    Super,
}

/// Infimum or supremum over the normal cone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    Minus,
    Plus,
}

/// Equation whose residual is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Variant {
    Reflected,
    /// Adds `(n/2) <grad phi, DV>`.
    Penalized(f64),
}

/// The Hamiltonian of a control problem. The parabolic form is independent
/// of `r`; the elliptic (discounted) form adds `lambda r`.
#[derive(Debug, Clone, Copy)]
pub struct HamiltonianSpec<'a, const D: usize> {
    pub problem: &'a ControlProblem<D>,
    /// Discount rate of the elliptic form.
    pub lambda: Option<f64>,
}

impl<'a, const D: usize> HamiltonianSpec<'a, D> {
    pub fn parabolic(problem: &'a ControlProblem<D>) -> Self {
        Self { problem, lambda: None }
    }

    /// `lambda r + H`, using the problem's discount rate.
    pub fn elliptic(problem: &'a ControlProblem<D>) -> Self {
        Self { problem, lambda: problem.discount }
    }

    /// Strict monotonicity constant in `r`: 0 for the parabolic form.
    pub fn gamma(&self) -> f64 {
        self.lambda.unwrap_or(0.0)
    }

    /// Value and maximizing control (lowest index on ties).
    pub fn hamiltonian(&self, t: f64, x: &Point<D>, r: f64, q: &Point<D>, big_q: &Matrix<D>) -> (f64, usize) {
        debug_assert!((big_q - big_q.transpose()).amax() <= 1e-10, "Q must be symmetric");
        let c = &self.problem.coeffs;
        let mut best = (f64::NEG_INFINITY, 0);
        for u in 0..self.problem.n_controls() {
            let a = c.diffusion(t, x, u);
            let v = -0.5 * (a * big_q).trace() - c.drift(t, x, u).dot(q) - self.problem.g(t, x, u);
            if v > best.0 {
                best = (v, u);
            }
        }
        (best.0 + self.gamma() * r, best.1)
    }

    /// `max_u |b|` and `max_u ||sigma sigma^T||` (Frobenius) at `(t, x)`.
    fn local_bounds(&self, t: f64, x: &Point<D>) -> (f64, f64) {
        let c = &self.problem.coeffs;
        (0..self.problem.n_controls()).fold((0.0, 0.0), |(b, a), u| {
            (f64::max(b, c.drift(t, x, u).norm()), f64::max(a, c.diffusion(t, x, u).norm()))
        })
    }
}

/// `inf` (minus) or `sup` (plus) of `<q, -n>` over 64 samples of the normal
/// cone at `x`, extreme rays included.
pub fn normal_bound<const D: usize>(domain: &DomainModel<D>, x: &Point<D>, q: &Point<D>, side: Bound) -> Result<f64, HjbError> {
    let normals = domain.normal_cone_sample(x, 64)?;
    Ok(bound_over(&normals, q, side))
}

fn bound_over<const D: usize>(normals: &[Point<D>], q: &Point<D>, side: Bound) -> f64 {
    let vals = normals.iter().map(|n| -q.dot(n));
    match side {
        Bound::Minus => vals.fold(f64::INFINITY, f64::min),
        Bound::Plus => vals.fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Finite-difference derivatives at one node.
struct Stencil<const D: usize> {
    r: f64,
    q: Point<D>,
    big_q: Matrix<D>,
}

fn value_at<const D: usize>(v: &ValueGrid<D>, k: usize, node: Option<usize>) -> Option<f64> {
    node.and_then(|n| v.node_value(k, n))
}

fn central_stencil<const D: usize>(v: &ValueGrid<D>, k: usize, node: usize) -> Option<Stencil<D>> {
    let lat = &v.lattice;
    let h = lat.dx;
    let r = v.node_value(k, node)?;
    let mut q = Point::<D>::zeros();
    let mut big_q = Matrix::<D>::zeros();
    for i in 0..D {
        let p = value_at(v, k, lat.neighbor(node, i, 1))?;
        let m = value_at(v, k, lat.neighbor(node, i, -1))?;
        q[i] = (p - m) / (2.0 * h);
        big_q[(i, i)] = (p - 2.0 * r + m) / (h * h);
        for j in 0..i {
            let corner = |si: isize, sj: isize| {
                let a = lat.neighbor(node, i, si)?;
                value_at(v, k, lat.neighbor(a, j, sj))
            };
            let mixed = (corner(1, 1)? - corner(1, -1)? - corner(-1, 1)? + corner(-1, -1)?) / (4.0 * h * h);
            big_q[(i, j)] = mixed;
            big_q[(j, i)] = mixed;
        }
    }
    Some(Stencil { r, q, big_q })
}

/// Gradient from second-order one-sided differences pointing into the
/// domain, central where neither side fits.
fn one_sided_gradient<const D: usize>(v: &ValueGrid<D>, k: usize, node: usize) -> Option<Point<D>> {
    let lat = &v.lattice;
    let h = lat.dx;
    let dom = v.domain();
    let r = v.node_value(k, node)?;
    let inside = |n: Option<usize>| n.filter(|&n| dom.contains(&lat.point(n)));
    let mut q = Point::<D>::zeros();
    for i in 0..D {
        let f1 = inside(lat.neighbor(node, i, 1));
        let f2 = inside(lat.neighbor(node, i, 2));
        let b1 = inside(lat.neighbor(node, i, -1));
        let b2 = inside(lat.neighbor(node, i, -2));
        q[i] = if let (Some(a), Some(b)) = (value_at(v, k, f1), value_at(v, k, f2)) {
            (-3.0 * r + 4.0 * a - b) / (2.0 * h)
        } else if let (Some(a), Some(b)) = (value_at(v, k, b1), value_at(v, k, b2)) {
            (3.0 * r - 4.0 * a + b) / (2.0 * h)
        } else {
            let p = value_at(v, k, lat.neighbor(node, i, 1))?;
            let m = value_at(v, k, lat.neighbor(node, i, -1))?;
            (p - m) / (2.0 * h)
        };
    }
    Some(q)
}

/// Time-derivative part: `-D_t V` (forward) for parabolic grids, nothing for
/// the elliptic form.
fn time_term<const D: usize>(spec: &HamiltonianSpec<'_, D>, v: &ValueGrid<D>, k: usize, slot: usize) -> f64 {
    if spec.lambda.is_some() || k + 1 >= v.n_slices() {
        return 0.0;
    }
    -(v.values[k + 1][slot] - v.values[k][slot]) / v.dt()
}

fn residual_unchecked<const D: usize>(
    spec: &HamiltonianSpec<'_, D>,
    v: &ValueGrid<D>,
    field: Option<&PenaltyField<D>>,
    k: usize,
    node: usize,
    variant: Variant,
) -> Option<f64> {
    let s = central_stencil(v, k, node)?;
    let slot = v.slot_of(node)?;
    let x = v.lattice.point(node);
    let t = v.times[k];
    let mut res = time_term(spec, v, k, slot) + spec.hamiltonian(t, &x, s.r, &s.q, &s.big_q).0;
    if let (Variant::Penalized(n), Some(f)) = (variant, field) {
        res += 0.5 * n * f.grad_phi(&x).dot(&s.q);
    }
    Some(res)
}

/// `-D_t V + H(t, x, V, D_x V, D_x^2 V)` at an interior lattice node of
/// slice `k`, with the penalty transport term in the penalized variant.
pub fn hjb_residual<const D: usize>(
    spec: &HamiltonianSpec<'_, D>,
    v: &ValueGrid<D>,
    k: usize,
    node: usize,
    variant: Variant,
) -> Result<f64, HjbError> {
    let x = v.lattice.point(node);
    let needed = 2.0 * v.dx();
    let distance = if v.domain().contains(&x) { v.domain().boundary_distance(&x) } else { 0.0 };
    let outside = || HjbError::StencilOutsideDomain { x: x.iter().copied().collect(), distance, needed };
    if distance < needed {
        return Err(outside());
    }
    let field = matches!(variant, Variant::Penalized(_)).then(|| PenaltyField::new(v.domain().clone()));
    residual_unchecked(spec, v, field.as_ref(), k, node, variant).ok_or_else(outside)
}

/// Largest `|residual|` over interior nodes (at least two lattice steps
/// inside) and all slices but the last.
pub fn max_interior_residual<const D: usize>(spec: &HamiltonianSpec<'_, D>, v: &ValueGrid<D>, variant: Variant) -> f64 {
    let nodes = interior_nodes(v);
    let slices = if spec.lambda.is_some() { 1 } else { v.n_slices() - 1 };
    let field = PenaltyField::new(v.domain().clone());
    (0..slices)
        .into_par_iter()
        .map(|k| {
            nodes
                .iter()
                .filter_map(|&n| residual_unchecked(spec, v, Some(&field), k, n, variant))
                .fold(0.0, |a: f64, r| a.max(r.abs()))
        })
        .reduce(|| 0.0, f64::max)
}

/// Positions of the interior nodes of `v` (at least two lattice steps inside).
pub fn interior_points<const D: usize>(v: &ValueGrid<D>) -> Vec<Point<D>> {
    interior_nodes(v).into_iter().map(|n| v.lattice.point(n)).collect()
}

/// Largest `|residual|` at the given lattice positions (skipping those that
/// are not nodes of `v`) over all slices but the last. Used to compare grids
/// of different resolution on a common set of points.
pub fn max_residual_at<const D: usize>(
    spec: &HamiltonianSpec<'_, D>,
    v: &ValueGrid<D>,
    variant: Variant,
    points: &[Point<D>],
) -> f64 {
    let nodes: Vec<usize> = points.iter().filter_map(|p| v.node_at(p)).collect();
    let slices = if spec.lambda.is_some() { 1 } else { v.n_slices() - 1 };
    let field = PenaltyField::new(v.domain().clone());
    (0..slices)
        .into_par_iter()
        .map(|k| {
            nodes
                .iter()
                .filter_map(|&n| residual_unchecked(spec, v, Some(&field), k, n, variant))
                .fold(0.0, |a: f64, r| a.max(r.abs()))
        })
        .reduce(|| 0.0, f64::max)
}

fn interior_nodes<const D: usize>(v: &ValueGrid<D>) -> Vec<usize> {
    let needed = 2.0 * v.dx();
    v.domain_slots()
        .into_iter()
        .map(|s| v.active[s])
        .filter(|&n| v.domain().boundary_distance(&v.lattice.point(n)) >= needed)
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CertificateOptions {
    pub tol: f64,
    /// Per-point records are kept for every `record_stride`-th slice (and for
    /// every failing point, up to `max_failures`).
    pub record_stride: usize,
    pub max_failures: usize,
    /// Normal cone samples at corners.
    pub cone_samples: usize,
}

impl CertificateOptions {
    pub fn new(tol: f64) -> Self {
        Self { tol, record_stride: usize::MAX, max_failures: 1000, cone_samples: 64 }
    }

    /// `5 (dx + dt)` for the grid.
    pub fn scheme_tolerance<const D: usize>(v: &ValueGrid<D>) -> Self {
        Self::new(5.0 * (v.dx() + v.dt()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PointKind {
    Interior,
    Boundary,
    Terminal,
}

#[derive(Debug, Clone, Serialize)]
pub struct PointRecord {
    pub t: f64,
    pub x: Vec<f64>,
    pub kind: PointKind,
    pub residual: f64,
    pub n_minus: Option<f64>,
    pub n_plus: Option<f64>,
    /// Nonnegative when the point passes.
    pub margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub side: Side,
    pub tol: f64,
    pub passed: bool,
    pub points_checked: usize,
    pub failures: usize,
    pub worst_interior: Option<PointRecord>,
    pub worst_boundary: Option<PointRecord>,
    pub worst_terminal: Option<PointRecord>,
    pub records: Vec<PointRecord>,
    /// Strict monotonicity constant used for `r` (0 for the parabolic form).
    pub gamma: f64,
    pub notes: Vec<String>,
}

fn worse(a: Option<PointRecord>, b: &PointRecord) -> Option<PointRecord> {
    match a {
        Some(a) if a.margin <= b.margin => Some(a),
        _ => Some(b.clone()),
    }
}

/// Checks the sub- or supersolution inequalities of `V` on the grid: the
/// residual at interior nodes, the relaxed boundary condition at nodes
/// within two lattice steps of the boundary, and the terminal condition.
pub fn check_viscosity_certificate<const D: usize>(
    spec: &HamiltonianSpec<'_, D>,
    v: &ValueGrid<D>,
    side: Side,
    opts: &CertificateOptions,
) -> CertificateReport {
    let dom = v.domain();
    let field = PenaltyField::new(dom.clone());
    let needed = 2.0 * v.dx();
    let mut interior = Vec::new();
    let mut boundary = Vec::new();
    for s in v.domain_slots() {
        let node = v.active[s];
        let x = v.lattice.point(node);
        if dom.boundary_distance(&x) >= needed {
            interior.push(node);
        } else {
            let normals = dom.pooled_normals(&x, v.dx(), opts.cone_samples);
            boundary.push((node, normals));
        }
    }
    let elliptic = spec.lambda.is_some();
    let slices = if elliptic { 1 } else { v.n_slices() - 1 };
    let tol = opts.tol;
    let judge = |r: f64| match side {
        Side::Sub => tol - r,
        Side::Super => r + tol,
    };
    let per_slice: Vec<Vec<PointRecord>> = (0..slices)
        .into_par_iter()
        .map(|k| {
            let t = v.times[k];
            let keep_all = k % opts.record_stride.max(1) == 0;
            let mut out = Vec::new();
            for &node in &interior {
                let Some(res) = residual_unchecked(spec, v, Some(&field), k, node, Variant::Reflected) else {
                    continue;
                };
                let margin = judge(res);
                out.push(PointRecord {
                    t,
                    x: v.lattice.point(node).iter().copied().collect(),
                    kind: PointKind::Interior,
                    residual: res,
                    n_minus: None,
                    n_plus: None,
                    margin,
                    passed: margin >= 0.0,
                });
            }
            for (node, normals) in &boundary {
                let (Some(res), Some(q)) = (
                    residual_unchecked(spec, v, Some(&field), k, *node, Variant::Reflected),
                    one_sided_gradient(v, k, *node),
                ) else {
                    continue;
                };
                let n_minus = bound_over(normals, &q, Bound::Minus);
                let n_plus = bound_over(normals, &q, Bound::Plus);
                let margin = match side {
                    Side::Sub => tol - res.min(n_minus),
                    Side::Super => res.max(n_plus) + tol,
                };
                out.push(PointRecord {
                    t,
                    x: v.lattice.point(*node).iter().copied().collect(),
                    kind: PointKind::Boundary,
                    residual: res,
                    n_minus: Some(n_minus),
                    n_plus: Some(n_plus),
                    margin,
                    passed: margin >= 0.0,
                });
            }
            if !keep_all {
                // Keep only the slice's failures and its worst point of each kind.
                let mut kept: Vec<PointRecord> = out.iter().filter(|r| !r.passed).cloned().collect();
                for kind in [PointKind::Interior, PointKind::Boundary] {
                    if let Some(w) =
                        out.iter().filter(|r| r.kind == kind && r.passed).min_by(|a, b| a.margin.total_cmp(&b.margin))
                    {
                        kept.push(w.clone());
                    }
                }
                out = kept;
            }
            out
        })
        .collect();

    let mut points_checked = slices * (interior.len() + boundary.len());
    let mut records = Vec::new();
    let mut failures = 0;
    let mut worst_interior = None;
    let mut worst_boundary = None;
    let mut worst_terminal = None;
    for (k, slice) in per_slice.into_iter().enumerate() {
        let keep_all = k % opts.record_stride.max(1) == 0;
        for r in slice {
            match r.kind {
                PointKind::Interior => worst_interior = worse(worst_interior, &r),
                _ => worst_boundary = worse(worst_boundary, &r),
            }
            if !r.passed {
                failures += 1;
                if failures <= opts.max_failures {
                    records.push(r);
                }
            } else if keep_all {
                records.push(r);
            }
        }
    }

    let mut notes = Vec::new();
    if !elliptic {
        let k = v.n_slices() - 1;
        let t = v.times[k];
        for (s, x) in v.states.iter().enumerate() {
            let node = v.active[s];
            if !dom.contains(&v.lattice.point(node)) {
                continue;
            }
            let gap = v.values[k][s] - spec.problem.h(x);
            let margin = match side {
                Side::Sub => -gap,
                Side::Super => gap,
            };
            let rec = PointRecord {
                t,
                x: x.iter().copied().collect(),
                kind: PointKind::Terminal,
                residual: gap,
                n_minus: None,
                n_plus: None,
                margin,
                passed: margin >= 0.0,
            };
            points_checked += 1;
            worst_terminal = worse(worst_terminal, &rec);
            if !rec.passed {
                failures += 1;
                if failures <= opts.max_failures {
                    records.push(rec);
                }
            }
        }
        notes.push("parabolic Hamiltonian is independent of r; strict monotonicity constant taken as 0".into());
    } else {
        notes.push(format!("elliptic form lambda r + H with strict monotonicity constant {}", spec.gamma()));
    }
    CertificateReport {
        side,
        tol,
        passed: failures == 0,
        points_checked,
        failures,
        worst_interior,
        worst_boundary,
        worst_terminal,
        records,
        gamma: spec.gamma(),
        notes,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub tol: f64,
    pub passed: bool,
    /// `min (v - u)` over common nodes.
    pub min_gap: f64,
    pub worst_t: f64,
    pub worst_x: Vec<f64>,
    pub nodes_compared: usize,
}

/// Checks `u <= v + tol_sub + tol_super` at every node the two grids share,
/// given a passing subsolution certificate for `u` and supersolution
/// certificate for `v`.
pub fn check_comparison<const D: usize>(
    u: &ValueGrid<D>,
    v: &ValueGrid<D>,
    u_report: Option<&CertificateReport>,
    v_report: Option<&CertificateReport>,
) -> Result<ComparisonReport, HjbError> {
    let ur = u_report.filter(|r| r.passed && r.side == Side::Sub).ok_or(HjbError::CertificateMissing { side: "sub" })?;
    let vr =
        v_report.filter(|r| r.passed && r.side == Side::Super).ok_or(HjbError::CertificateMissing { side: "super" })?;
    let tol = ur.tol + vr.tol;
    let mut min_gap = f64::INFINITY;
    let mut worst = (0.0, Vec::new());
    let mut nodes_compared = 0;
    for (ku, &t) in u.times.iter().enumerate() {
        let kv = v.time_index(t);
        if (v.times[kv] - t).abs() > 1e-9 {
            continue;
        }
        for s in u.domain_slots() {
            let p = u.lattice.point(u.active[s]);
            let Some(vv) = v.node_at(&p).and_then(|n| v.node_value(kv, n)) else {
                continue;
            };
            nodes_compared += 1;
            let gap = vv - u.values[ku][s];
            if gap < min_gap {
                min_gap = gap;
                worst = (t, p.iter().copied().collect());
            }
        }
    }
    Ok(ComparisonReport {
        tol,
        passed: nodes_compared > 0 && min_gap >= -tol,
        min_gap,
        worst_t: worst.0,
        worst_x: worst.1,
        nodes_compared,
    })
}

/// Sampled checks of the structural hypotheses on the built-in Hamiltonian.
#[derive(Debug, Clone, Serialize)]
pub struct StructuralReport {
    pub samples: usize,
    pub gamma: f64,
    /// `min (H(v) - H(u) - gamma (v - u))` over `u <= v`.
    pub monotonicity_margin: f64,
    /// `min (bound - |H(q1, X) - H(q2, Y)|)`.
    pub lipschitz_margin: f64,
    /// `min (H(Q1) - H(Q2))` over `Q1 <= Q2`.
    pub ellipticity_margin: f64,
    pub passed: bool,
}

/// Samples `(t, x, q, Q)` with `x` in the domain and checks monotonicity in
/// `r`, the Lipschitz bound in `(q, Q)` and degenerate ellipticity.
pub fn check_structure<const D: usize>(
    spec: &HamiltonianSpec<'_, D>,
    domain: &DomainModel<D>,
    t_range: (f64, f64),
    samples: usize,
    seed: u64,
) -> StructuralReport {
    let xs = domain.interior_samples(samples, seed);
    let mut rng = seeded_rng(seed, u64::MAX - 7);
    let sym = |rng: &mut rand_chacha::ChaCha8Rng| {
        let m = Matrix::<D>::from_fn(|_, _| rng.random_range(-2.0..2.0));
        (m + m.transpose()) * 0.5
    };
    let (mut mono, mut lip, mut ell) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let gamma = spec.gamma();
    for x in &xs {
        let t = rng.random_range(t_range.0..=t_range.1);
        let q1 = Point::<D>::from_fn(|_, _| rng.random_range(-2.0..2.0));
        let q2 = Point::<D>::from_fn(|_, _| rng.random_range(-2.0..2.0));
        let (a, b) = (sym(&mut rng), sym(&mut rng));
        let r1: f64 = rng.random_range(-2.0..2.0);
        let r2 = r1 + rng.random_range(0.0..2.0);
        let h = |r: f64, q: &Point<D>, m: &Matrix<D>| spec.hamiltonian(t, x, r, q, m).0;
        mono = mono.min(h(r2, &q1, &a) - h(r1, &q1, &a) - gamma * (r2 - r1) + 1e-12 * (1.0 + r2.abs()));
        let (bmax, amax) = spec.local_bounds(t, x);
        let bound = bmax * (q1 - q2).norm() + 0.5 * amax * (a - b).norm();
        lip = lip.min(bound - (h(r1, &q1, &a) - h(r1, &q2, &b)).abs() + 1e-12);
        let w = Point::<D>::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let c: f64 = rng.random_range(0.0..2.0);
        let a2 = a + w * w.transpose() * c;
        ell = ell.min(h(r1, &q1, &a) - h(r1, &q1, &a2) + 1e-12);
    }
    StructuralReport {
        samples: xs.len(),
        gamma,
        monotonicity_margin: mono,
        lipschitz_margin: lip,
        ellipticity_margin: ell,
        passed: mono >= 0.0 && lip >= 0.0 && ell >= 0.0,
    }
}
