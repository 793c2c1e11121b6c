use proptest::prelude::*;

use mpt_dde::dde::{mae, Integrator, ModelParams};
use mpt_dde::eqfree::{lift, restrict, PlanarPoint, Rect};
use mpt_dde::forcing::{ForcingSpec, SineTerm};
use mpt_dde::scan::{amplitude_threshold, basin_scan, classify_point, Classifier, Response, ThresholdSearch};

const H: f64 = 0.01;

fn integ(tau: f64, u: f64, phi: f64) -> Integrator {
    let params = ModelParams::default().with_tau(tau).with_u(u);
    Integrator::new(params, ForcingSpec::periodic(4.1, phi), H).unwrap()
}

fn tau_strategy() -> impl Strategy<Value = f64> {
    (130_u32..=162).prop_map(|k| k as f64 * H)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn evolution_composes(tau in tau_strategy(), u in 0.0..0.3, x1 in -0.7..0.0, x2 in -0.7..0.0,
                          a in 0_usize..300, b in 0_usize..300) {
        let m = integ(tau, u, 0.0);
        let y = lift(PlanarPoint::new(x1, x2), m.n(), H).unwrap();
        let once = m.evolve_steps(&y, a + b).unwrap();
        let twice = m.evolve_steps(&m.evolve_steps(&y, a).unwrap(), b).unwrap();
        prop_assert_eq!(once.values(), twice.values());
        prop_assert_eq!(once.step_index(), twice.step_index());
    }

    #[test]
    fn restrict_inverts_lift(x1 in -5.0..5.0, x2 in -5.0..5.0, n in 2_usize..400) {
        let p = PlanarPoint::new(x1, x2);
        prop_assert_eq!(restrict(&lift(p, n, H).unwrap()), p);
    }

    #[test]
    fn distance_is_symmetric(x1 in -1.0..1.0, x2 in -1.0..1.0, y1 in -1.0..1.0, y2 in -1.0..1.0, n in 2_usize..300) {
        let a = lift(PlanarPoint::new(x1, x2), n, H).unwrap();
        let b = lift(PlanarPoint::new(y1, y2), n, H).unwrap();
        prop_assert_eq!(mae(&a, &b).unwrap(), mae(&b, &a).unwrap());
        prop_assert_eq!(mae(&a, &a).unwrap(), 0.0);
        prop_assert!(mae(&a, &b).unwrap() >= 0.0);
    }

    #[test]
    fn periodic_forcing_repeats(t in -100.0..100.0, phi in 0.0..std::f64::consts::TAU, period in 0.5..10.0) {
        let f = ForcingSpec::periodic(period, phi);
        prop_assert!((f.eval(t + period).unwrap() - f.eval(t).unwrap()).abs() < 1e-9);
        let q = ForcingSpec::SumOfSines {
            terms: vec![
                SineTerm { frequency: 1.0 / period, amplitude: 0.7, phase: phi },
                SineTerm { frequency: 3.0 / period, amplitude: 0.2, phase: 0.0 },
            ],
        };
        prop_assert!((q.eval(t + period).unwrap() - q.eval(t).unwrap()).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn unforced_small_state_is_robust(tau in tau_strategy(), dx in -1e-4..1e-4, dy in -1e-4..1e-4) {
        let m = integ(tau, 0.0, 0.0);
        let label = classify_point(&m, PlanarPoint::new(-0.5 + dx, -0.5 + dy), &Classifier::default()).unwrap();
        prop_assert_eq!(label.response, Response::Small);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn basin_scan_is_reproducible(tau in tau_strategy(), u in 0.0..0.12) {
        let params = ModelParams::default().with_tau(tau).with_u(u);
        let rect = Rect::square(-0.65, 0.05);
        let f = ForcingSpec::periodic(4.1, 0.0);
        let a = basin_scan(&rect, 4, 3, &params, &f, H, &Classifier::default()).unwrap();
        let b = basin_scan(&rect, 4, 3, &params, &f, H, &Classifier::default()).unwrap();
        prop_assert_eq!(a.grid.to_csv().unwrap(), b.grid.to_csv().unwrap());
        prop_assert_eq!(a.grid.sidecar_json().unwrap(), b.grid.sidecar_json().unwrap());
    }

    #[test]
    fn threshold_brackets_the_transition(tau in prop::sample::select(vec![1.55, 1.57, 1.62]), phi in 0.0..std::f64::consts::TAU) {
        let params = ModelParams::default().with_tau(tau);
        let f = ForcingSpec::periodic(4.1, phi);
        let c = Classifier::default();
        let coarse = ThresholdSearch { u_max: 0.2, du: 0.02 };
        let fine = ThresholdSearch { u_max: 0.2, du: 0.01 };
        let tc = amplitude_threshold(&params, &f, H, &coarse, &c).unwrap();
        let tf = amplitude_threshold(&params, &f, H, &fine, &c).unwrap();
        match (tf, tc) {
            (Some(a), Some(b)) => prop_assert!(a <= b + 1e-12),
            (None, Some(b)) => prop_assert!(false, "fine search missed coarse threshold {}", b),
            _ => {}
        }
        if let Some(t) = tf {
            let label = |u: f64| classify_point(&integ(tau, u, phi), PlanarPoint::new(-0.5, -0.5), &c).unwrap().response;
            prop_assert_eq!(label(t), Response::Large);
            if t > 0.0 {
                prop_assert_eq!(label(t - fine.du), Response::Small);
            }
        }
    }
}
