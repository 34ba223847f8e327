use std::sync::OnceLock;

use proptest::prelude::*;

use super::*;
use crate::control::{value_elliptic, ControlProblem, GridSpec};
use crate::geometry::DomainModel;
use crate::Matrix;

fn disk() -> &'static VerifiedDomain<2> {
    static C: OnceLock<VerifiedDomain<2>> = OnceLock::new();
    C.get_or_init(|| DomainModel::disk([0.0, 0.0], 1.0).r0(0.5).build().unwrap().verify(10_000).unwrap())
}

fn brownian() -> Coefficients<2> {
    Coefficients::constant(Matrix::<2>::identity(), Point::<2>::zeros())
}

#[test]
fn frozen_dynamics_keep_the_start_point() {
    let c = Coefficients::constant(Matrix::<2>::zeros(), Point::<2>::zeros());
    let x0 = Point::<2>::new(0.2, -0.1);
    let s = sample_support_set(disk(), &c, &x0, 2.0, 20, 4.0, &SupportOptions::default()).unwrap();
    assert!(s.endpoints.iter().all(|e| *e == x0));
    let probes = probe_grid(disk(), 0.1);
    let far = probes.iter().map(|p| (p - x0).norm()).fold(0.0, f64::max);
    assert_eq!(s.coverage, far);
}

#[test]
fn radial_flow_sticks_at_the_boundary() {
    let c = Coefficients::constant(Matrix::<2>::zeros(), Point::<2>::new(1.0, 0.0));
    let s = sample_support_set(disk(), &c, &Point::<2>::zeros(), 2.0, 10, 4.0, &SupportOptions::default()).unwrap();
    for e in &s.endpoints {
        assert!((e - Point::<2>::new(1.0, 0.0)).norm() < 1e-9, "{e}");
    }
}

#[test]
fn nondegenerate_noise_covers_the_disk() {
    let s = sample_support_set(disk(), &brownian(), &Point::<2>::zeros(), 2.0, 500, 4.0, &SupportOptions::default()).unwrap();
    assert!(s.coverage < 0.1, "coverage {}", s.coverage);
    assert!(s.endpoints.iter().all(|e| disk().distance(e) <= 1e-9));
}

#[test]
fn state_dependent_sigma_needs_acknowledgment() {
    let c = Coefficients::<2>::new(1, |_, x, _| Matrix::<2>::identity() * (1.0 + x.norm()), |_, _, _| Point::<2>::zeros(), 2.0, 0.0);
    let err = sample_support_set(disk(), &c, &Point::<2>::zeros(), 1.0, 5, 1.0, &SupportOptions::default());
    assert!(matches!(err, Err(SupportError::StateDependentSigma)));
    let opts = SupportOptions { allow_state_dependent_sigma: true, ..SupportOptions::default() };
    assert!(sample_support_set(disk(), &c, &Point::<2>::zeros(), 1.0, 5, 1.0, &opts).is_ok());
}

fn short_opts() -> SubmartingaleOptions {
    SubmartingaleOptions { paths: 200, branches: 20, dt: 1e-3, seed: 3, max_violation_fraction: 0.05 }
}

const TIMES: [f64; 4] = [0.0, 0.025, 0.05, 0.1];

#[test]
fn constants_are_exact_martingales() {
    let r = check_submartingale(disk(), &brownian(), |_, _| 2.5, &Point::<2>::zeros(), &TIMES, &short_opts()).unwrap();
    assert!(r.passed);
    for p in &r.pairs {
        assert_eq!((p.mean_diff, p.std_err, p.conditional_mean, p.violation_fraction), (0.0, 0.0, 0.0, 0.0));
    }
}

#[test]
fn squared_norm_is_a_submartingale() {
    let r = check_submartingale(disk(), &brownian(), |_, x| x.norm_squared(), &Point::<2>::zeros(), &TIMES, &short_opts())
        .unwrap();
    assert!(r.passed, "{:?}", r.pairs);
}

#[test]
fn negated_squared_norm_fails() {
    let r = check_submartingale(disk(), &brownian(), |_, x| -x.norm_squared(), &Point::<2>::zeros(), &TIMES, &short_opts())
        .unwrap();
    assert!(!r.unconditional_passed);
}

#[test]
fn elliptic_zero_solution_is_constant_on_the_reachable_set() {
    let coeffs = Coefficients::constant(Matrix::<2>::identity() * 0.5, Point::<2>::zeros());
    let p = ControlProblem::discounted(coeffs.clone(), |_, _| 0.0, 1.0);
    let v = value_elliptic(&p, disk(), &GridSpec::new(0.2), 1e-3).unwrap();
    let s = sample_support_set(disk(), &coeffs, &Point::<2>::zeros(), 1.0, 50, 4.0, &SupportOptions::default()).unwrap();
    let r = check_constancy(&s, |x| v.grid.interpolate(0, x), 1e-12);
    assert!(r.passed && r.range == 0.0);
    let r = check_constancy(&s, |x| x[0], 1e-3);
    assert!(!r.passed);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn coverage_is_monotone_in_the_number_of_controls(n in 1usize..30, extra in 1usize..30, seed in 0u64..1000) {
        let opts = SupportOptions { star_spacing: 0.0, n_steps: 40, seed, ..SupportOptions::default() };
        let a = sample_support_set(disk(), &brownian(), &Point::<2>::zeros(), 1.0, n, 4.0, &opts).unwrap();
        let b = sample_support_set(disk(), &brownian(), &Point::<2>::zeros(), 1.0, n + extra, 4.0, &opts).unwrap();
        prop_assert!(b.coverage <= a.coverage);
        prop_assert!(b.endpoints.iter().all(|e| disk().distance(e) <= 1e-9));
    }
}
