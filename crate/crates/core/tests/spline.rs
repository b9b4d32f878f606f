mod common;

use common::{central_diff, clamped_knots, de_boor, rel_err};
use eviplan_core::spline::{basis, BSplineTrajectory, Trajectory};
use nalgebra::Vector4;
use proptest::prelude::*;

fn trajectory() -> impl Strategy<Value = BSplineTrajectory> {
    (4usize..12, -5.0..5.0f64, 0.05..2.0f64).prop_flat_map(|(n, t0, dt)| {
        proptest::collection::vec(proptest::array::uniform4(-10.0..10.0f64), n).prop_map(move |cps| {
            BSplineTrajectory::build_clamped(cps.into_iter().map(Vector4::from).collect(), t0, dt).unwrap()
        })
    })
}

fn with_time() -> impl Strategy<Value = (BSplineTrajectory, f64)> {
    trajectory().prop_flat_map(|tr| {
        let (a, b) = (tr.t_start(), tr.t_end());
        (Just(tr), a..=b)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn basis_is_a_partition_of_unity((tr, t) in with_time()) {
        let sum: f64 = (0..tr.n_ctrl()).map(|i| basis(i, 3, t, tr.knots()).unwrap()).sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        let w: f64 = tr.control_weights(t, 0).unwrap().iter().sum();
        prop_assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn values_stay_in_the_control_hull((tr, t) in with_time()) {
        let q = tr.eval(t).unwrap();
        for c in 0..4 {
            let lo = tr.control_points().iter().map(|p| p[c]).fold(f64::INFINITY, f64::min);
            let hi = tr.control_points().iter().map(|p| p[c]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(q[c] >= lo - 1e-9 && q[c] <= hi + 1e-9);
        }
    }

    #[test]
    fn ends_interpolate_the_end_control_points(tr in trajectory()) {
        let cps = tr.control_points();
        prop_assert!((tr.eval(tr.t_start()).unwrap() - cps[0]).norm() < 1e-9);
        prop_assert!((tr.eval(tr.t_end()).unwrap() - cps[cps.len() - 1]).norm() < 1e-9);
    }

    #[test]
    fn matches_de_boor((tr, t) in with_time()) {
        let knots = clamped_knots(tr.n_ctrl(), tr.t_start(), tr.dt());
        prop_assert_eq!(&knots[..], tr.knots());
        let a = tr.eval(t).unwrap();
        let b = de_boor(tr.control_points(), &knots, t);
        prop_assert!((a - b).norm() < 1e-9 * (1.0 + b.norm()));
    }

    #[test]
    fn second_derivative_is_continuous_at_knots(tr in trajectory()) {
        let h = 1e-9 * tr.dt();
        for k in 1..tr.n_ctrl() - 3 {
            let t = tr.t_start() + tr.dt() * k as f64;
            for order in 0..=2 {
                let l = tr.eval_derivative(t - h, order).unwrap();
                let r = tr.eval_derivative(t + h, order).unwrap();
                let scale = 1.0 + l.norm();
                prop_assert!((l - r).norm() < 1e-5 * scale, "order {order} at {t}: {l:?} vs {r:?}");
            }
        }
    }

    #[test]
    fn time_derivatives_match_finite_differences((tr, t) in with_time()) {
        let h = 1e-5 * tr.dt();
        let t = t.clamp(tr.t_start() + 2.0 * h, tr.t_end() - 2.0 * h);
        // Stay off knots, where the third derivative jumps.
        let u = (t - tr.t_start()) / tr.dt();
        prop_assume!((u - u.round()).abs() > 1e-3);
        for order in 1..=3 {
            for c in 0..4 {
                let fd = central_diff(|s| tr.eval_derivative(s, order - 1).unwrap()[c], t, h);
                let an = tr.eval_derivative(t, order).unwrap()[c];
                prop_assert!(rel_err(&[an], &[fd], 1.0) < 1e-4, "order {order} channel {c}: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn control_partials_match_finite_differences((tr, t) in with_time(), order in 0usize..=3) {
        let jac = tr.d_eval_d_control(t, order).unwrap();
        let n = tr.n_ctrl();
        for i in 0..n {
            for c in 0..4 {
                let mut probe = tr.clone();
                let fd = central_diff(
                    |x| {
                        let mut cps = tr.control_points().to_vec();
                        cps[i][c] = x;
                        probe.set_control_points(&cps).unwrap();
                        probe.eval_derivative(t, order).unwrap()[c]
                    },
                    tr.control_points()[i][c],
                    1e-4,
                );
                prop_assert!(rel_err(&[jac[(c, 4 * i + c)]], &[fd], 1.0) < 1e-4);
            }
        }
    }
}

#[test]
fn rejects_invalid_construction_and_queries() {
    let cps = vec![Vector4::zeros(); 6];
    assert!(BSplineTrajectory::build_clamped(cps[..3].to_vec(), 0.0, 1.0).is_err());
    assert!(BSplineTrajectory::build_clamped(cps.clone(), 0.0, 0.0).is_err());
    let tr = BSplineTrajectory::build_clamped(cps, 0.0, 1.0).unwrap();
    assert!(tr.eval(3.5).is_err());
    assert!(tr.eval(-0.1).is_err());
    assert!(tr.eval_derivative(1.0, 4).is_err());
    assert_eq!(tr.domain(), (0.0, 3.0));
}
