//! Lattice-based value storage with multilinear interpolation.

use serde::Serialize;

use crate::geometry::DomainModel;
use crate::Point;

/// Where the controlled state lives: the closed domain (reflected dynamics)
/// or the domain plus an exterior tube (penalized dynamics).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Region {
    Closure,
    Tube { width: f64 },
}

/// Regular lattice `origin + dx * i`, `0 <= i_k < dims[k]`.
#[derive(Debug, Clone)]
pub struct Lattice<const D: usize> {
    pub origin: Point<D>,
    pub dx: f64,
    pub dims: [usize; D],
}

impl<const D: usize> Lattice<D> {
    /// Lattice covering `[lo - pad, hi + pad]`, snapped so that the origin
    /// is a multiple of `dx`.
    pub fn covering(lo: &Point<D>, hi: &Point<D>, pad: f64, dx: f64) -> Self {
        let mut dims = [0; D];
        let origin = Point::<D>::from_fn(|i, _| ((lo[i] - pad) / dx).floor() * dx);
        for (i, d) in dims.iter_mut().enumerate() {
            *d = (((hi[i] + pad) - origin[i]) / dx).ceil() as usize + 1;
        }
        Self { origin, dx, dims }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn multi_index(&self, mut idx: usize) -> [usize; D] {
        let mut out = [0; D];
        for (k, o) in out.iter_mut().enumerate() {
            *o = idx % self.dims[k];
            idx /= self.dims[k];
        }
        out
    }

    pub fn flat_index(&self, m: &[usize; D]) -> usize {
        let mut idx = 0;
        for k in (0..D).rev() {
            idx = idx * self.dims[k] + m[k];
        }
        idx
    }

    pub fn point(&self, idx: usize) -> Point<D> {
        let m = self.multi_index(idx);
        Point::<D>::from_fn(|i, _| self.origin[i] + m[i] as f64 * self.dx)
    }

    /// Neighbour `idx + step * e_axis`, if it exists.
    pub fn neighbor(&self, idx: usize, axis: usize, step: isize) -> Option<usize> {
        let mut m = self.multi_index(idx);
        let v = m[axis] as isize + step;
        if v < 0 || v as usize >= self.dims[axis] {
            return None;
        }
        m[axis] = v as usize;
        Some(self.flat_index(&m))
    }
}

/// Value estimates on `[t_0, t_K] x lattice`, with the minimizing control at
/// every node of every slice but the last.
#[derive(Debug, Clone)]
pub struct ValueGrid<const D: usize> {
    pub lattice: Lattice<D>,
    pub times: Vec<f64>,
    pub region: Region,
    domain: DomainModel<D>,
    /// Active lattice nodes (within `dx sqrt(D)` of the region).
    pub active: Vec<usize>,
    /// `node -> position in active`, `usize::MAX` when inactive.
    slot: Vec<usize>,
    /// State attached to each active node: the node clamped onto the region.
    pub states: Vec<Point<D>>,
    /// `values[k][slot]`.
    pub values: Vec<Vec<f64>>,
    /// `argmin[k][slot]` for `k < K`.
    pub argmin: Vec<Vec<u16>>,
}

impl<const D: usize> ValueGrid<D> {
    /// Empty grid (values zero) over `region`.
    pub fn new(domain: &DomainModel<D>, region: Region, dx: f64, times: Vec<f64>) -> Self {
        let width = match region {
            Region::Closure => 0.0,
            Region::Tube { width } => width,
        };
        let (lo, hi) = domain.shape().bounds();
        let reach = dx * (D as f64).sqrt() * (1.0 + 1e-9);
        let lattice = Lattice::covering(&lo, &hi, width + 2.0 * dx, dx);
        let mut active = Vec::new();
        let mut slot = vec![usize::MAX; lattice.len()];
        let mut states = Vec::new();
        for (idx, sl) in slot.iter_mut().enumerate() {
            let p = lattice.point(idx);
            if domain.distance(&p) <= width + reach {
                *sl = active.len();
                active.push(idx);
                states.push(clamp_to(domain, region, &p));
            }
        }
        let n = active.len();
        let k = times.len();
        Self {
            lattice,
            region,
            domain: domain.clone(),
            active,
            slot,
            states,
            values: vec![vec![0.0; n]; k],
            argmin: vec![vec![0; n]; k.saturating_sub(1)],
            times,
        }
    }

    /// Grid whose slice `k` holds `f(t_k, state)`; every argmin is 0.
    pub fn from_fn(
        domain: &DomainModel<D>,
        region: Region,
        dx: f64,
        times: Vec<f64>,
        f: impl Fn(f64, &Point<D>) -> f64,
    ) -> Self {
        let mut g = Self::new(domain, region, dx, times);
        for k in 0..g.times.len() {
            let t = g.times[k];
            for s in 0..g.states.len() {
                g.values[k][s] = f(t, &g.states[s]);
            }
        }
        g
    }

    pub fn domain(&self) -> &DomainModel<D> {
        &self.domain
    }

    pub fn dx(&self) -> f64 {
        self.lattice.dx
    }

    /// Time step (0 for a single slice).
    pub fn dt(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }

    pub fn n_slices(&self) -> usize {
        self.times.len()
    }

    pub fn slot_of(&self, node: usize) -> Option<usize> {
        match self.slot.get(node) {
            Some(&s) if s != usize::MAX => Some(s),
            _ => None,
        }
    }

    /// Value at an active node.
    pub fn node_value(&self, k: usize, node: usize) -> Option<f64> {
        self.slot_of(node).map(|s| self.values[k][s])
    }

    /// Active nodes lying in the closed domain.
    pub fn domain_slots(&self) -> Vec<usize> {
        (0..self.active.len()).filter(|&s| self.domain.contains(&self.lattice.point(self.active[s]))).collect()
    }

    pub fn clamp(&self, x: &Point<D>) -> Point<D> {
        clamp_to(&self.domain, self.region, x)
    }

    /// Multilinear interpolation of slice `k` at `x` (clamped onto the
    /// region first).
    pub fn interpolate(&self, k: usize, x: &Point<D>) -> f64 {
        interpolate_slice(&self.lattice, &self.slot, &self.values[k], &self.clamp(x))
    }

    /// Time index closest to `t`.
    pub fn time_index(&self, t: f64) -> usize {
        if self.times.len() < 2 {
            return 0;
        }
        let k = ((t - self.times[0]) / self.dt()).round();
        (k.max(0.0) as usize).min(self.times.len() - 1)
    }

    /// Minimizing control at the node nearest to `x` in the slice nearest
    /// to `t`.
    pub fn policy_at(&self, t: f64, x: &Point<D>) -> usize {
        let k = self.time_index(t).min(self.argmin.len().saturating_sub(1));
        let s = self.nearest_slot(&self.clamp(x));
        self.argmin.get(k).map(|a| a[s] as usize).unwrap_or(0)
    }

    fn nearest_slot(&self, x: &Point<D>) -> usize {
        let lat = &self.lattice;
        let m: [usize; D] = std::array::from_fn(|i| {
            let r = ((x[i] - lat.origin[i]) / lat.dx).round();
            (r.max(0.0) as usize).min(lat.dims[i] - 1)
        });
        let idx = lat.flat_index(&m);
        if let Some(s) = self.slot_of(idx) {
            return s;
        }
        // Fall back to the nearest active node.
        (0..self.active.len())
            .min_by(|&a, &b| (self.states[a] - x).norm_squared().total_cmp(&(self.states[b] - x).norm_squared()))
            .expect("grid has active nodes")
    }

    pub(crate) fn slots(&self) -> &[usize] {
        &self.slot
    }

    /// Active node sitting at `x`, if `x` is a lattice point.
    pub fn node_at(&self, x: &Point<D>) -> Option<usize> {
        let lat = &self.lattice;
        let mut m = [0usize; D];
        for i in 0..D {
            let r = (x[i] - lat.origin[i]) / lat.dx;
            if (r - r.round()).abs() > 1e-6 || r.round() < 0.0 || r.round() as usize >= lat.dims[i] {
                return None;
            }
            m[i] = r.round() as usize;
        }
        let idx = lat.flat_index(&m);
        self.slot_of(idx).map(|_| idx)
    }

    /// Sup-norm difference over the lattice nodes in the closed domain that
    /// both grids share.
    pub fn max_difference(&self, other: &ValueGrid<D>, k: usize, k_other: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for s in self.domain_slots() {
            let p = self.lattice.point(self.active[s]);
            if let Some(v) = other.node_at(&p).and_then(|n| other.node_value(k_other, n)) {
                worst = worst.max((self.values[k][s] - v).abs());
            }
        }
        worst
    }
}

pub(crate) fn clamp_to<const D: usize>(domain: &DomainModel<D>, region: Region, x: &Point<D>) -> Point<D> {
    match region {
        Region::Closure => domain.closest_point(x),
        Region::Tube { width } => {
            let d = domain.distance(x);
            if d <= width {
                *x
            } else {
                let p = domain.closest_point(x);
                p + (x - p) * (width / d)
            }
        }
    }
}

pub(crate) fn interpolate_slice<const D: usize>(lat: &Lattice<D>, slot: &[usize], values: &[f64], x: &Point<D>) -> f64 {
    let mut base = [0usize; D];
    let mut frac = [0.0; D];
    for i in 0..D {
        let r = (x[i] - lat.origin[i]) / lat.dx;
        let c = (r.floor().max(0.0) as usize).min(lat.dims[i] - 2);
        base[i] = c;
        frac[i] = (r - c as f64).clamp(0.0, 1.0);
    }
    let mut acc = 0.0;
    let mut wsum = 0.0;
    for corner in 0..(1usize << D) {
        let mut m = base;
        let mut w = 1.0;
        for i in 0..D {
            if corner >> i & 1 == 1 {
                m[i] += 1;
                w *= frac[i];
            } else {
                w *= 1.0 - frac[i];
            }
        }
        if w == 0.0 {
            continue;
        }
        let s = slot[lat.flat_index(&m)];
        if s != usize::MAX {
            acc += w * values[s];
            wsum += w;
        }
    }
    if wsum > 0.0 {
        acc / wsum
    } else {
        f64::NAN
    }
}
