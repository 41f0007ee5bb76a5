use nalgebra::DMatrix;
use proptest::prelude::*;

use fldp::catalog;
use fldp::ldp::{free_energy_curve, legendre_fenchel, FreeEnergyCurve};
use fldp::linalg::row_sums;
use fldp::propagator::{asymptotic_law, integrate_law, mgf};
use fldp::protocol::{generator_from_rates, tilt_s_from_rates, tilt_w_from_rates, EdgeRate};
use fldp::simulate::{heat, sample_trajectory};
use fldp::{Direction, Functional, RateModel, RateProtocol, Reversed};

fn rate_matrix(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(0.05f64..5.0, n * n).prop_map(move |v| {
        let mut m = DMatrix::from_vec(n, n, v);
        for i in 0..n {
            m[(i, i)] = 0.0;
        }
        m
    })
}

fn fourier_protocol() -> impl Strategy<Value = RateProtocol> {
    (
        prop::collection::vec((0.5f64..3.0, -0.4f64..0.4, -0.4f64..0.4), 6),
        0.2f64..4.0,
    )
        .prop_map(|(coefs, period)| {
            let pairs = [(0, 1), (1, 0), (1, 2), (2, 1), (2, 0), (0, 2)];
            let edges = pairs.iter().zip(coefs).map(|(&edge, (c0, a, b))| {
                let rate = EdgeRate::Fourier {
                    c0,
                    a: vec![a * c0],
                    b: vec![b * c0],
                };
                (edge, rate)
            });
            RateProtocol::new(3, period, edges, "random").unwrap()
        })
}

fn law(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, n).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generator_rows_sum_to_zero(rates in rate_matrix(4)) {
        let a = generator_from_rates(&rates);
        for s in row_sums(&a).iter() {
            prop_assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn rates_are_periodic(p in fourier_protocol(), t in 0.0f64..10.0) {
        let v = p.into_validated(64).unwrap();
        let period = v.period_len();
        let diff = (v.rate_matrix(t) - v.rate_matrix(t + period)).amax();
        prop_assert!(diff < 1e-9);
    }

    #[test]
    fn heat_tilt_transpose_duality(rates in rate_matrix(3), lambda in -3.0f64..2.0) {
        let l = tilt_w_from_rates(&rates, lambda, 0.0).unwrap();
        let m = tilt_w_from_rates(&rates, -1.0 - lambda, 0.0).unwrap();
        let scale = l.amax().max(1.0);
        prop_assert!((l.transpose() - m).amax() / scale < 1e-12);
    }

    #[test]
    fn untilted_generators_coincide(rates in rate_matrix(3), pi in law(3)) {
        let a = generator_from_rates(&rates);
        let w = tilt_w_from_rates(&rates, 0.0, 0.0).unwrap();
        prop_assert!((w - &a).amax() < 1e-15);
        let s = tilt_s_from_rates(&rates, 0.0, &pi, 0.0).unwrap();
        prop_assert!((s - a).amax() < 1e-12);
    }

    #[test]
    fn mgf_at_zero_is_one(p in fourier_protocol(), t in 0.1f64..5.0) {
        let v = p.into_validated(64).unwrap();
        for dir in [Direction::Forward, Direction::Backward] {
            let u = mgf(&v, Functional::W, 0.0, t, dir, None, 256).unwrap().values();
            prop_assert!(u.iter().all(|x| (x - 1.0).abs() < 1e-10));
        }
    }

    #[test]
    fn law_stays_a_distribution(p in fourier_protocol(), pi in law(3), t in 0.1f64..8.0) {
        let v = p.into_validated(64).unwrap();
        let traj = integrate_law(&v, &pi, t, 256).unwrap();
        for k in 0..traj.len() {
            let row = traj.law(k);
            prop_assert!(row.iter().all(|&x| x > 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rate_function_is_nonnegative(a in 0.05f64..3.0, b in -2.0f64..2.0) {
        let lambdas: Vec<f64> = (0..=100).map(|k| -2.0 + 0.04 * k as f64).collect();
        let values = lambdas.iter().map(|l| a * l * l + b * l).collect();
        let curve = FreeEnergyCurve::from_values(Functional::W, Direction::Forward, lambdas, values);
        let zs: Vec<f64> = (0..=40).map(|k| b + 3.0 * a * (k as f64 - 20.0) / 20.0).collect();
        let rate = legendre_fenchel(&curve, &zs).unwrap();
        for (z, i) in zs.iter().zip(&rate.values) {
            prop_assert!(*i >= 0.0);
            prop_assert!((i - (z - b).powi(2) / (4.0 * a)).abs() < 1e-9);
        }
    }

    #[test]
    fn heat_is_odd_under_reversal(seed in any::<u64>(), t in 0.5f64..4.0) {
        let p = catalog::p3_sine();
        let traj = sample_trajectory(&p, 0, t, seed, 0).unwrap();
        let reversed = Reversed::new(&p, t);
        let (w, _) = heat(&p, &traj).unwrap();
        let (wr, _) = heat(&reversed, &traj.reversed()).unwrap();
        prop_assert!((w + wr).abs() < 1e-10);
    }
}

#[test]
fn periodic_law_is_a_fixed_point() {
    for (_, p) in catalog::shipped() {
        let nu = asymptotic_law(&p, 1024).unwrap();
        assert!(nu.closure_residual < 1e-10);
    }
}

#[test]
fn free_energy_is_convex() {
    let lambdas: Vec<f64> = (0..=50).map(|k| -3.0 + 0.1 * k as f64).collect();
    for (_, p) in catalog::shipped() {
        for f in [Functional::W, Functional::S] {
            let c = free_energy_curve(&p, f, Direction::Forward, &lambdas, 512).unwrap();
            assert!(c.min_second_difference() > -1e-10);
        }
    }
}
