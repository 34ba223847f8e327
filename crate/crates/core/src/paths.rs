//! Time grids and reproducible Brownian increments.
//!
//! Increments are generated from a counter-based ChaCha stream: the key is
//! derived from the seed and the refinement level, the stream number is the
//! path index and the word position is the step index times a fixed stride.
//! Any increment can therefore be regenerated in isolation, independently of
//! thread scheduling.
//!
//! ```
//! use rsde::{BrownianPath, StreamId, TimeGrid};
//!
//! let grid = TimeGrid::new(0.0, 1.0, 8);
//! let coarse = BrownianPath::<2>::sample(grid, StreamId::new(7, 0));
//! let fine = coarse.refine();
//! // Pairs of fine increments sum to the coarse ones.
//! let sum = fine.increments()[0] + fine.increments()[1];
//! assert!((sum - coarse.increments()[0]).norm() < 1e-12);
//! ```

use rand::{RngCore, SeedableRng};
use rand_chacha::{ChaCha8Rng, ChaCha12Rng};
use serde::Serialize;

use crate::Point;

/// Uniform grid `t0 < t0 + dt < ... < t_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, n_steps: usize) -> Self {
        assert!(t0 < t_end, "time grid needs t0 < t_end");
        assert!(n_steps >= 1, "time grid needs at least one step");
        Self { t0, t_end, n_steps }
    }

    /// Grid on `[t0, t_end]` whose step does not exceed `max_dt`.
    pub fn with_max_step(t0: f64, t_end: f64, max_dt: f64) -> Self {
        let n = ((t_end - t0) / max_dt - 1e-9).ceil().max(1.0) as usize;
        Self::new(t0, t_end, n)
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t_end
        } else {
            self.t0 + k as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }

    /// The grid with every step split into `2^levels` equal parts.
    pub fn refined(&self, levels: u32) -> Self {
        Self::new(self.t0, self.t_end, self.n_steps << levels)
    }
}

/// Key of a Brownian path: global seed and path index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct StreamId {
    pub seed: u64,
    pub path_index: u64,
}

impl StreamId {
    pub fn new(seed: u64, path_index: u64) -> Self {
        Self { seed, path_index }
    }
}

/// SplitMix64 finaliser, used to derive independent keys.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// General-purpose generator for auxiliary sampling (not Brownian paths).
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0x5EED));
    rng.set_stream(stream);
    rng
}

/// Counter-based Gaussian source keyed by `(seed, level, path_index)`.
struct GaussianCounter<const D: usize> {
    rng: ChaCha12Rng,
}

impl<const D: usize> GaussianCounter<D> {
    /// Each coordinate consumes two `u64`s (four words) via Box-Muller.
    const STRIDE: u128 = 4 * D as u128;

    fn new(id: StreamId, level: u32) -> Self {
        let key = mix(id.seed ^ mix(0xB0B0 + level as u64));
        let mut rng = ChaCha12Rng::seed_from_u64(key);
        rng.set_stream(id.path_index);
        Self { rng }
    }

    fn standard_normal_at(&mut self, index: usize) -> Point<D> {
        self.rng.set_word_pos(index as u128 * Self::STRIDE);
        Point::<D>::from_fn(|_, _| {
            let a = self.rng.next_u64();
            let b = self.rng.next_u64();
            let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
            let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
    }
}

/// Brownian increments on a time grid, tagged with their stream.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath<const D: usize> {
    grid: TimeGrid,
    increments: Vec<Point<D>>,
    stream_id: StreamId,
    level: u32,
}

impl<const D: usize> BrownianPath<D> {
    /// I.i.d. `N(0, dt I)` increments from the counter-based stream.
    pub fn sample(grid: TimeGrid, stream_id: StreamId) -> Self {
        let mut src = GaussianCounter::<D>::new(stream_id, 0);
        let sd = grid.dt().sqrt();
        let increments = (0..grid.n_steps).map(|k| src.standard_normal_at(k) * sd).collect();
        Self { grid, increments, stream_id, level: 0 }
    }

    /// Path with prescribed increments (deterministic drivers, test hooks).
    pub fn from_increments(grid: TimeGrid, increments: Vec<Point<D>>) -> Self {
        assert_eq!(increments.len(), grid.n_steps, "one increment per step");
        Self { grid, increments, stream_id: StreamId::new(0, u64::MAX), level: 0 }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn increments(&self) -> &[Point<D>] {
        &self.increments
    }

    pub fn stream_id(&self) -> StreamId {
        self.stream_id
    }

    /// Number of refinements applied to the originally sampled path.
    pub fn level(&self) -> u32 {
        self.level
    }

    /// Halves the step by Brownian-bridge midpoints drawn from a child
    /// stream. The fine increments sum pairwise to the coarse ones exactly
    /// (up to one rounding).
    pub fn refine(&self) -> Self {
        let level = self.level + 1;
        let mut src = GaussianCounter::<D>::new(self.stream_id, level);
        let half_sd = 0.5 * self.grid.dt().sqrt();
        let mut increments = Vec::with_capacity(2 * self.increments.len());
        for (k, dw) in self.increments.iter().enumerate() {
            let first = dw * 0.5 + src.standard_normal_at(k) * half_sd;
            increments.push(first);
            increments.push(dw - first);
        }
        Self { grid: self.grid.refined(1), increments, stream_id: self.stream_id, level }
    }

    pub fn refine_levels(&self, levels: u32) -> Self {
        (0..levels).fold(self.clone(), |p, _| p.refine())
    }

    /// Path values `w(t_k)` with `w(t0) = 0`.
    pub fn values(&self) -> Vec<Point<D>> {
        let mut out = Vec::with_capacity(self.increments.len() + 1);
        let mut w = Point::<D>::zeros();
        out.push(w);
        for dw in &self.increments {
            w += dw;
            out.push(w);
        }
        out
    }

    /// `sup_k |w(t_k)|`.
    pub fn sup_norm(&self) -> f64 {
        self.values().iter().map(|w| w.norm()).fold(0.0, f64::max)
    }
}

/// Samples `count` paths with indices `first..first + count` in parallel;
/// output order follows the index.
pub fn sample_bundle<const D: usize>(grid: TimeGrid, seed: u64, first: u64, count: usize) -> Vec<BrownianPath<D>> {
    use rayon::prelude::*;
    (0..count as u64)
        .into_par_iter()
        .map(|i| BrownianPath::sample(grid, StreamId::new(seed, first + i)))
        .collect()
}
