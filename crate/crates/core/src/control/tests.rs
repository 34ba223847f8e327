use std::sync::OnceLock;

use proptest::prelude::*;

use super::*;
use crate::geometry::VerifiedDomain;
use crate::{Matrix, Point};

fn disk() -> &'static VerifiedDomain<2> {
    static C: OnceLock<VerifiedDomain<2>> = OnceLock::new();
    C.get_or_init(|| DomainModel::disk([0.0, 0.0], 1.0).r0(0.5).build().unwrap().verify(10_000).unwrap())
}

fn interval() -> &'static VerifiedDomain<1> {
    static C: OnceLock<VerifiedDomain<1>> = OnceLock::new();
    C.get_or_init(|| DomainModel::interval(-1.0, 1.0).build().unwrap().verify(10_000).unwrap())
}

fn iso(s: f64) -> Matrix<2> {
    Matrix::<2>::identity() * s
}

fn two_control_problem() -> ControlProblem<1> {
    let coeffs = Coefficients::controlled_drift(
        Matrix::<1>::new(0.3),
        vec![Point::<1>::new(-1.0), Point::<1>::new(1.0)],
    );
    ControlProblem::new(coeffs, |_, x: &Point<1>, _| x[0] * x[0], |_| 0.0, 1.0)
}

#[test]
fn unit_cost_gives_remaining_time_exactly() {
    let coeffs = Coefficients::constant(iso(0.5), Point::<2>::new(0.2, 0.0));
    let problem = ControlProblem::new(coeffs, |_, _, _| 1.0, |_| 0.0, 1.0);
    for dynamics in [Dynamics::Reflected, Dynamics::Penalized(64.0)] {
        let v = value_dp(&problem, disk(), &GridSpec::new(0.2), dynamics).unwrap();
        for (k, slice) in v.values.iter().enumerate() {
            for val in slice {
                assert!((val - (1.0 - v.times[k])).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn frozen_state_integrates_the_running_cost() {
    let coeffs = Coefficients::constant(Matrix::<2>::zeros(), Point::<2>::zeros());
    let problem = ControlProblem::new(coeffs, |_, x: &Point<2>, _| x[0] * x[0] + 0.5, |x| x[1], 1.0);
    let v = value_dp(&problem, disk(), &GridSpec::new(0.25), Dynamics::Reflected).unwrap();
    for (k, slice) in v.values.iter().enumerate() {
        for (s, val) in slice.iter().enumerate() {
            let x = v.states[s];
            let expected = (1.0 - v.times[k]) * (x[0] * x[0] + 0.5) + x[1];
            assert!((val - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn terminal_slice_is_h_and_values_are_bounded() {
    let coeffs = Coefficients::controlled_drift(iso(0.5), vec![Point::<2>::zeros(), Point::<2>::new(0.5, 0.0)]);
    let problem = ControlProblem::new(coeffs, |_, x: &Point<2>, u| x[0] * x[0] + 0.1 * u as f64, |x| x[1], 1.0);
    let v = value_dp(&problem, disk(), &GridSpec::new(0.2), Dynamics::Reflected).unwrap();
    let last = v.n_slices() - 1;
    for (s, x) in v.states.iter().enumerate() {
        assert_eq!(v.values[last][s], problem.h(x));
    }
    let bound = 1.0 * 1.1 + 1.0;
    assert!(v.values.iter().flatten().all(|x| x.is_finite() && x.abs() <= bound));
}

#[test]
fn coarse_time_step_is_rejected() {
    let coeffs = Coefficients::constant(iso(0.5), Point::<2>::zeros());
    let problem = ControlProblem::new(coeffs, |_, _, _| 1.0, |_| 0.0, 1.0);
    let spec = GridSpec::new(0.1).with_dt(0.1);
    assert!(matches!(value_dp(&problem, disk(), &spec, Dynamics::Reflected), Err(ControlError::GridTooCoarse { .. })));
}

#[test]
fn non_diagonal_diffusion_is_rejected() {
    let coeffs = Coefficients::constant(Matrix::<2>::new(0.5, 0.2, 0.0, 0.5), Point::<2>::zeros());
    let problem = ControlProblem::new(coeffs, |_, _, _| 1.0, |_| 0.0, 1.0);
    assert!(matches!(
        value_dp(&problem, disk(), &GridSpec::new(0.2), Dynamics::Reflected),
        Err(ControlError::NonDiagonalDiffusion { .. })
    ));
}

#[test]
fn quadrature_matches_first_two_moments() {
    let diag = Point::<2>::new(0.25, 0.09);
    for q in [Quadrature::Tensor, Quadrature::Star] {
        let nodes = quadrature_nodes(q, &diag, 0.01, 0.1);
        let w: f64 = nodes.iter().map(|n| n.1).sum();
        let mean: Point<2> = nodes.iter().map(|(e, w)| e * *w).sum();
        let cov: Matrix<2> = nodes.iter().map(|(e, w)| e * e.transpose() * *w).sum();
        assert!((w - 1.0).abs() < 1e-14 && mean.norm() < 1e-14);
        assert!((cov - Matrix::<2>::from_diagonal(&(diag * 0.01))).norm() < 1e-14);
        assert!(nodes.iter().all(|n| n.1 >= 0.0));
    }
}

#[test]
fn two_control_interval_self_converges() {
    let problem = two_control_problem();
    let x = Point::<1>::new(0.5);
    let coarse = value_dp(&problem, interval(), &GridSpec::new(0.05), Dynamics::Reflected).unwrap();
    let fine = value_dp(&problem, interval(), &GridSpec::new(0.0125), Dynamics::Reflected).unwrap();
    let diff = (coarse.interpolate(0, &x) - fine.interpolate(0, &x)).abs();
    assert!(diff <= 2.0 * (coarse.dx() + coarse.dt()), "diff {diff}");
    // The optimal control pushes toward the origin.
    assert_eq!(coarse.policy_at(0.0, &x), 0);
    assert_eq!(coarse.policy_at(0.0, &Point::<1>::new(-0.5)), 1);
}

#[test]
fn penalized_values_approach_reflected_values() {
    let coeffs = Coefficients::controlled_drift(iso(0.5), vec![Point::<2>::zeros(), Point::<2>::new(0.5, 0.0)]);
    let problem = ControlProblem::new(coeffs, |_, x: &Point<2>, u| x[0] * x[0] + 0.1 * u as f64, |x| x[1], 1.0);
    let spec = GridSpec::new(0.1);
    let reference = value_dp(&problem, disk(), &spec, Dynamics::Reflected).unwrap();
    let gaps: Vec<f64> = [64.0, 256.0, 1024.0]
        .iter()
        .map(|&n| {
            let v = value_dp(&problem, disk(), &spec, Dynamics::Penalized(n)).unwrap();
            (0..reference.n_slices()).map(|k| reference.max_difference(&v, k, k)).fold(0.0, f64::max)
        })
        .collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
}

#[test]
fn elliptic_trivial_examples() {
    let coeffs = Coefficients::constant(iso(0.5), Point::<2>::zeros());
    let spec = GridSpec::new(0.2);
    let one = ControlProblem::discounted(coeffs.clone(), |_, _| 1.0, 1.0);
    let eps = 1e-3;
    let v = value_elliptic(&one, disk(), &spec, eps).unwrap();
    assert!(v.truncation_bound <= eps * (1.0 + 1e-12));
    for val in &v.grid.values[0] {
        assert!((val - 1.0).abs() <= eps + v.dt, "{val}");
    }
    let zero = ControlProblem::discounted(coeffs, |_, _| 0.0, 1.0);
    let v = value_elliptic(&zero, disk(), &spec, eps).unwrap();
    assert!(v.grid.values[0].iter().all(|&x| x == 0.0));
}

#[test]
fn elliptic_disk_self_converges() {
    let coeffs = Coefficients::constant(iso(0.5), Point::<2>::zeros());
    let problem = ControlProblem::discounted(coeffs, |x: &Point<2>, _| x[0] * x[0], 1.0);
    let coarse = value_elliptic(&problem, disk(), &GridSpec::new(0.1), 1e-3).unwrap();
    let fine = value_elliptic(&problem, disk(), &GridSpec::new(0.05), 1e-3).unwrap();
    let tol = 2.0 * (0.1 + coarse.dt);
    for x in coarse.grid.states.iter().step_by(7) {
        let d = (coarse.grid.interpolate(0, x) - fine.grid.interpolate(0, x)).abs();
        assert!(d <= tol, "{d} at {x}");
    }
}

#[test]
fn missing_discount_is_an_error() {
    let coeffs = Coefficients::constant(iso(0.5), Point::<2>::zeros());
    let problem = ControlProblem::new(coeffs, |_, _, _| 1.0, |_| 0.0, 1.0);
    assert!(matches!(value_elliptic(&problem, disk(), &GridSpec::new(0.2), 1e-3), Err(ControlError::MissingDiscount)));
}

#[test]
fn monte_carlo_trivial_costs() {
    let coeffs = Coefficients::constant(iso(0.5), Point::<2>::zeros());
    let x = Point::<2>::new(0.3, 0.2);
    let zero = ControlProblem::new(coeffs.clone(), |_, _, _| 0.0, |_| 0.0, 1.0);
    let e = policy_cost_mc(&zero, disk(), 0.0, &x, Policy::Constant(0), 100, Dynamics::Reflected, 0.01, 1).unwrap();
    assert_eq!((e.mean, e.std_err), (0.0, 0.0));
    let one = ControlProblem::new(coeffs, |_, _, _| 1.0, |_| 0.0, 1.0);
    let e = policy_cost_mc(&one, disk(), 0.25, &x, Policy::Constant(0), 100, Dynamics::Reflected, 0.01, 1).unwrap();
    assert!((e.mean - 0.75).abs() <= 3.0 * e.std_err + 1e-12);
}

#[test]
fn singleton_monte_carlo_matches_dp() {
    let coeffs = Coefficients::constant(iso(0.5), Point::<2>::zeros());
    let problem = ControlProblem::new(coeffs, |_, x: &Point<2>, _| x[0] * x[0], |x| x[1], 1.0);
    let v = value_dp(&problem, disk(), &GridSpec::new(0.1), Dynamics::Reflected).unwrap();
    let x = Point::<2>::new(0.4, -0.3);
    let e = policy_cost_mc(&problem, disk(), 0.0, &x, Policy::Grid(&v), 2000, Dynamics::Reflected, v.dt(), 7).unwrap();
    let dp = v.interpolate(0, &x);
    let tol = 3.0 * e.std_err + 2.0 * (v.dx() + v.dt());
    assert!((e.mean - dp).abs() <= tol, "mc {} dp {dp} tol {tol}", e.mean);
}

#[test]
fn dpp_holds_for_the_two_control_problem() {
    let problem = two_control_problem();
    let v = value_dp(&problem, interval(), &GridSpec::new(0.05), Dynamics::Reflected).unwrap();
    let x = Point::<1>::new(0.5);
    let r = check_dpp(&problem, interval(), 0.0, &x, 0.5, &v, 2000, Dynamics::Reflected, 11).unwrap();
    assert!(r.passed, "{r:?}");
    assert!(r.strict_witness, "{r:?}");
}

#[test]
fn dpp_is_tight_for_unit_cost() {
    let coeffs = Coefficients::controlled_drift(Matrix::<1>::new(0.3), vec![Point::<1>::new(-1.0), Point::<1>::new(1.0)]);
    let problem = ControlProblem::new(coeffs, |_, _, _| 1.0, |_| 0.0, 1.0);
    let v = value_dp(&problem, interval(), &GridSpec::new(0.05), Dynamics::Reflected).unwrap();
    let r = check_dpp(&problem, interval(), 0.0, &Point::<1>::new(0.2), 0.5, &v, 200, Dynamics::Reflected, 3).unwrap();
    for rec in &r.records {
        assert!((rec.rhs - rec.lhs).abs() < 1e-9 && rec.std_err < 1e-12, "{rec:?}");
    }
    assert!(r.passed && !r.strict_witness);
}

fn small_interval_value(a: f64, b: f64, c: f64, drifts: &[f64]) -> ValueGrid<1> {
    let coeffs = Coefficients::controlled_drift(Matrix::<1>::new(0.3), drifts.iter().map(|&d| Point::<1>::new(d)).collect());
    let problem = ControlProblem::new(coeffs, move |_, x: &Point<1>, u| a * x[0] * x[0] + b * u as f64, move |x| c * x[0], 0.25);
    value_dp(&problem, interval(), &GridSpec::new(0.1), Dynamics::Reflected).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dp_is_monotone_in_the_costs(a in 0.0..2.0f64, da in 0.0..1.0f64, c in -1.0..1.0f64) {
        let lo = small_interval_value(a, 0.1, c, &[-1.0, 1.0]);
        let hi = small_interval_value(a + da, 0.1, c, &[-1.0, 1.0]);
        for (x, y) in lo.values.iter().flatten().zip(hi.values.iter().flatten()) {
            prop_assert!(x <= y);
        }
    }

    #[test]
    fn terminal_shift_shifts_the_value(shift in -5.0..5.0f64) {
        let coeffs = Coefficients::controlled_drift(Matrix::<1>::new(0.3), vec![Point::<1>::new(-1.0), Point::<1>::new(1.0)]);
        let p = ControlProblem::new(coeffs, |_, x: &Point<1>, _| x[0] * x[0], |x| x[0], 0.25);
        let spec = GridSpec::new(0.1);
        let v = value_dp(&p, interval(), &spec, Dynamics::Reflected).unwrap();
        let w = value_dp(&p.shifted_terminal(shift), interval(), &spec, Dynamics::Reflected).unwrap();
        for (x, y) in v.values.iter().flatten().zip(w.values.iter().flatten()) {
            prop_assert!((y - x - shift).abs() <= 1e-10 * (1.0 + shift.abs()));
        }
    }

    #[test]
    fn enlarging_the_control_set_lowers_the_value(a in 0.0..2.0f64, extra in -2.0..2.0f64) {
        let small = small_interval_value(a, 0.0, 0.5, &[-1.0, 1.0]);
        let large = small_interval_value(a, 0.0, 0.5, &[-1.0, 1.0, extra]);
        for (x, y) in small.values.iter().flatten().zip(large.values.iter().flatten()) {
            prop_assert!(y <= x);
        }
    }
}
