//! Randomized invariants of the radial shooting layer and the linear solver.

use lowscat::linforce::{solve_decaying, uniform_log_grid, CoefficientPath, WeightedGridFunction};
use lowscat::potentials::RadialPotential;
use lowscat::radial::{l_of_theta1, theta1_of_l, turning_point};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use std::sync::Arc;

fn admissible_l(pot: &RadialPotential, lambda: f64, r1: f64, kappa: f64) -> f64 {
    kappa * r1 * pot.g(lambda, r1).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn deflection_is_odd_in_angular_momentum(
        mu in 0.3f64..1.8,
        lambda in 0.0f64..0.5,
        r1 in 1.5f64..30.0,
        kappa in 0.05f64..0.9,
    ) {
        let pot = RadialPotential::power_law(1.0, mu);
        let l = admissible_l(&pot, lambda, r1, kappa);
        let tp = theta1_of_l(&pot, lambda, r1, l).unwrap();
        let tm = theta1_of_l(&pot, lambda, r1, -l).unwrap();
        prop_assert!((tp + tm).abs() <= 1e-12 * tp.abs().max(1e-12));
        prop_assert!(tp < 0.0, "positive angular momentum deflects backward: {tp}");
    }

    #[test]
    fn shooting_round_trip(
        mu in 0.3f64..1.8,
        lambda in 0.0f64..0.5,
        r1 in 1.5f64..30.0,
        kappa in 0.05f64..0.85,
    ) {
        let pot = RadialPotential::power_law(1.0, mu);
        let l = admissible_l(&pot, lambda, r1, kappa);
        let theta1 = theta1_of_l(&pot, lambda, r1, l).unwrap();
        let l_back = l_of_theta1(&pot, lambda, r1, theta1).unwrap();
        prop_assert!((l_back - l).abs() <= 1e-8 * l.abs().max(1e-8), "l {l} vs {l_back}");
    }

    #[test]
    fn deflection_magnitude_grows_with_angular_momentum(
        mu in 0.3f64..1.8,
        lambda in 0.0f64..0.5,
        r1 in 1.5f64..30.0,
        kappa in 0.05f64..0.8,
    ) {
        let pot = RadialPotential::power_law(1.0, mu);
        let la = admissible_l(&pot, lambda, r1, kappa);
        let lb = admissible_l(&pot, lambda, r1, kappa + 0.05);
        let ta = theta1_of_l(&pot, lambda, r1, la).unwrap().abs();
        let tb = theta1_of_l(&pot, lambda, r1, lb).unwrap().abs();
        prop_assert!(tb > ta, "|theta1| not monotone: {ta} vs {tb}");
    }

    #[test]
    fn turning_point_zeroes_effective_potential(
        mu in 0.3f64..1.8,
        lambda in 0.0f64..0.5,
        l in 2.0f64..20.0,
    ) {
        let pot = RadialPotential::power_law(1.0, mu);
        let r_tp = turning_point(&pot, lambda, l).unwrap();
        prop_assume!(r_tp > 1.0);
        let w = |r: f64| 2.0 * lambda - 2.0 * pot.v1(r) - l * l / (r * r);
        let scale = (2.0 * lambda - 2.0 * pot.v1(r_tp)).abs();
        prop_assert!(w(r_tp).abs() <= 1e-9 * scale, "W(r_tp) = {}", w(r_tp));
        prop_assert!(w(1.01 * r_tp) > 0.0, "W must open up above the turning point");
    }

    #[test]
    fn inadmissible_kappa_is_rejected_not_panicking(
        mu in 0.3f64..1.8,
        lambda in 0.0f64..0.5,
        r1 in 1.5f64..30.0,
        excess in 1.001f64..1.5,
    ) {
        let pot = RadialPotential::power_law(1.0, mu);
        let l = admissible_l(&pot, lambda, r1, excess);
        prop_assert!(theta1_of_l(&pot, lambda, r1, l).is_err());
    }

    #[test]
    fn linear_solver_is_homogeneous(
        scale in 0.1f64..10.0,
        amp in 0.5f64..2.0,
        rate in 1.5f64..3.0,
    ) {
        let grid = uniform_log_grid(1e4, 400);
        let qp = CoefficientPath::new(
            Arc::new(|t: f64| DMatrix::from_element(1, 1, -0.1 / ((t + 1.0) * (t + 1.0)))),
            0.5,
            1,
        );
        let s = 0.6;
        let rhs = WeightedGridFunction::from_fn(grid.clone(), s, |t| {
            DVector::from_element(1, amp * t.powf(-rate))
        });
        let rhs_scaled = WeightedGridFunction::from_fn(grid, s, |t| {
            DVector::from_element(1, scale * amp * t.powf(-rate))
        });
        let z = solve_decaying(&qp, &rhs, s).unwrap();
        let zs = solve_decaying(&qp, &rhs_scaled, s).unwrap();
        for (a, b) in z.values.iter().zip(zs.values.iter()) {
            prop_assert!((scale * a[0] - b[0]).abs() <= 1e-9 * b[0].abs().max(1e-12));
        }
    }
}

#[test]
fn cutoff_is_a_partition_shape() {
    for i in 0..400 {
        let s = i as f64 * 0.005;
        let c = lowscat::util::cutoff_below(s, 1.0);
        assert!((0.0..=1.0).contains(&c));
        if s <= 0.5 {
            assert_eq!(c, 1.0);
        }
        if s >= 0.75 {
            assert_eq!(c, 0.0);
        }
    }
}
