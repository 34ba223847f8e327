//! The penalty potential `phi(x) = rho(d(x, D)^2)`.
//!
//! `rho(t) = t` on `[0, 4 r0^2]`, `rho(t) = 9 r0^2` beyond `9 r0^2`, with a
//! piecewise-quadratic C1 bridge in between. The bridge slope rises linearly
//! from 1 to 1.2 over the first 80% of the band and then falls linearly to 0,
//! so `0 <= rho' <= 1.2` and `|rho''| <= 1.2 / r0^2`.
//!
//! ```
//! use rsde::{DomainModel, PenaltyField, Point};
//!
//! let disk = DomainModel::disk([0.0, 0.0], 1.0).r0(0.5).build().unwrap();
//! let field = PenaltyField::new(disk);
//! let x = Point::<2>::new(1.3, 0.0);
//! assert!((field.phi(&x) - 0.09).abs() < 1e-12);
//! assert!((field.grad_phi(&x) - Point::<2>::new(0.6, 0.0)).norm() < 1e-12);
//! ```

use crate::geometry::DomainModel;
use crate::Point;

/// Bridge breakpoint as a fraction of the band `[4 r0^2, 9 r0^2]`.
const KINK: f64 = 0.8;
/// Peak slope of the bridge.
const PEAK: f64 = 1.2;

#[derive(Debug, Clone)]
pub struct PenaltyField<const D: usize> {
    domain: DomainModel<D>,
    lo: f64,
    hi: f64,
}

impl<const D: usize> PenaltyField<D> {
    pub fn new(domain: DomainModel<D>) -> Self {
        let r2 = domain.r0 * domain.r0;
        Self { domain, lo: 4.0 * r2, hi: 9.0 * r2 }
    }

    pub fn domain(&self) -> &DomainModel<D> {
        &self.domain
    }

    /// The knots `(4 r0^2, 9 r0^2)`.
    pub fn knots(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn rho(&self, t: f64) -> f64 {
        if t <= self.lo {
            return t;
        }
        if t >= self.hi {
            return self.hi;
        }
        let h = self.hi - self.lo;
        let u = (t - self.lo) / h;
        let c = (PEAK - 1.0) / (2.0 * KINK);
        if u <= KINK {
            self.lo + h * (u + c * u * u)
        } else {
            let at_kink = KINK + c * KINK * KINK;
            let s = PEAK / (1.0 - KINK);
            let w = 1.0 - u;
            let w0 = 1.0 - KINK;
            self.lo + h * (at_kink + 0.5 * s * (w0 * w0 - w * w))
        }
    }

    pub fn rho_prime(&self, t: f64) -> f64 {
        if t <= self.lo {
            return 1.0;
        }
        if t >= self.hi {
            return 0.0;
        }
        let u = (t - self.lo) / (self.hi - self.lo);
        if u <= KINK {
            1.0 + (PEAK - 1.0) * u / KINK
        } else {
            PEAK * (1.0 - u) / (1.0 - KINK)
        }
    }

    pub fn phi(&self, x: &Point<D>) -> f64 {
        let d = self.domain.distance(x);
        self.rho(d * d)
    }

    /// `2 rho'(d^2) (x - pi(x))`; zero inside the domain and beyond `3 r0`.
    pub fn grad_phi(&self, x: &Point<D>) -> Point<D> {
        let d = self.domain.distance(x);
        if d == 0.0 || d * d >= self.hi {
            return Point::<D>::zeros();
        }
        let p = self.domain.closest_point(x);
        (x - p) * (2.0 * self.rho_prime(d * d))
    }

    /// Lipschitz constant `2K` of `grad_phi`:
    /// `2 (PEAK (1 + l) + 2 * 9 * PEAK)` from the product rule with
    /// `|rho''| d^2 <= 9 PEAK`.
    pub fn gradient_lipschitz(&self) -> f64 {
        let l = self.domain.lipschitz_pi;
        2.0 * (PEAK * (1.0 + l) + 18.0 * PEAK)
    }

    /// Bound on `rho'`.
    pub fn max_rho_prime(&self) -> f64 {
        PEAK
    }
}
