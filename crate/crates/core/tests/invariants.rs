use mpt_dde::dde::{Integrator, ModelParams};
use mpt_dde::eqfree::{HealedMap, HealedMapConfig, PlanarPoint, Rect, Stability};
use mpt_dde::forcing::ForcingSpec;
use mpt_dde::manifold::{grow_stable_manifold, point_side, ManifoldCurve, PlanarMapPair, SCConfig, Side};
use mpt_dde::scan::{basin_scan, classify_point, Classifier, Response};
use mpt_dde::Error;

const H: f64 = 0.01;

fn periodic() -> ForcingSpec {
    ForcingSpec::periodic(4.1, 0.0)
}

fn healed(u: f64, ell: usize) -> HealedMap {
    let params = ModelParams::default().with_tau(1.55).with_u(u);
    HealedMap::new(HealedMapConfig::default().with_params(params).with_ell(ell)).unwrap()
}

#[test]
fn small_state_is_stable_and_origin_unstable() {
    let integ = Integrator::new(ModelParams::default().with_tau(1.45), ForcingSpec::Zero, H).unwrap();
    let mut drift = 0.0_f64;
    integ
        .run(&integ.constant_history(-0.5 + 1e-3).unwrap(), 10_000, |_, x| {
            drift = drift.max((x + 0.5).abs());
            mpt_dde::dde::Flow::Continue
        })
        .unwrap();
    assert!(drift < 1e-2, "{drift}");

    // the origin is an unstable focus: each half-cycle swings wider
    let mut swings = Vec::new();
    let mut peak = 0.0_f64;
    let mut sign = 1.0;
    integ
        .run(&integ.constant_history(1e-3).unwrap(), 20_000, |_, x| {
            if x * sign < 0.0 {
                swings.push(peak);
                peak = 0.0;
                sign = -sign;
            }
            peak = peak.max(x.abs());
            if x.abs() > 0.1 {
                mpt_dde::dde::Flow::Stop
            } else {
                mpt_dde::dde::Flow::Continue
            }
        })
        .unwrap();
    assert!(peak > 0.1, "stayed near the origin");
    assert!(swings.len() >= 3, "{swings:?}");
    assert!(swings.windows(2).all(|w| w[1] > w[0]), "{swings:?}");
}

#[test]
fn second_order_under_step_refinement() {
    // forced start from a constant history; the value at t = 4.1
    let head = |h: f64| {
        let integ = Integrator::new(ModelParams::default().with_tau(1.55).with_u(0.05), periodic(), h).unwrap();
        integ
            .evolve(&integ.constant_history(-0.5).unwrap(), 4.1)
            .unwrap()
            .head()
    };
    let (a, b, c) = (head(0.01), head(0.005), head(0.0025));
    let order = ((a - b) / (b - c)).abs().log2();
    assert!((order - 2.0).abs() <= 0.2, "observed order {order}");
}

#[test]
fn trajectories_are_bitwise_deterministic() {
    let run = || {
        let integ = Integrator::new(ModelParams::default().with_u(0.09), periodic(), H).unwrap();
        integ
            .trajectory(&integ.constant_history(-0.5).unwrap(), 300.0)
            .unwrap()
            .0
    };
    assert_eq!(run().samples, run().samples);
}

#[test]
fn chart_consistency() {
    let map = healed(0.09, 1);
    let rect = Rect::square(-0.65, 0.05);
    let mut defined = 0;
    for k in 0..25 {
        let x = rect.node(k / 5, k % 5, 5, 5);
        // the reduced map is only defined where its Newton solve succeeds
        let Ok(y) = map.healed_planar_map(x) else {
            continue;
        };
        defined += 1;
        let lhs = map.forward_map(x, 2).unwrap();
        let rhs = map.forward_map(y, 1).unwrap();
        assert!(
            lhs.dist_inf(&rhs) < 10.0 * map.config().newton_tol,
            "{x:?}: {lhs:?} vs {rhs:?}"
        );
    }
    assert!(defined >= 5, "defined at {defined} of 25 points");
}

#[test]
fn healing_improves_with_ell() {
    let seeds = [PlanarPoint::new(-0.2215, -0.2765), PlanarPoint::new(-0.4531, -0.5136)];
    for seed in seeds {
        let p: Vec<PlanarPoint> = (1..=3)
            .map(|ell| healed(0.09, ell).fixed_point(seed).unwrap().point)
            .collect();
        assert!(p[0].dist_inf(&p[1]) < 1e-2, "{p:?}");
        assert!(p[1].dist_inf(&p[2]) < 1e-3, "{p:?}");
    }
}

#[test]
fn classification_ignores_difference_step() {
    let roots = ModelParams::default().unforced_equilibria();
    let seeds = [(-0.51, -0.5), (-0.28, -0.31), (0.02, -0.01)];
    for ((x1, x2), root) in seeds.into_iter().zip(roots) {
        let classes: Vec<Stability> = [1e-5, 1e-6, 1e-7]
            .into_iter()
            .map(|fd_eps| {
                let cfg = HealedMapConfig {
                    fd_eps,
                    ..HealedMapConfig::default().with_params(ModelParams::default().with_tau(1.45))
                };
                let rec = HealedMap::new(cfg)
                    .unwrap()
                    .fixed_point(PlanarPoint::new(x1, x2))
                    .unwrap();
                assert!((rec.point.x1 - root).abs() < 1e-8);
                rec.classification
            })
            .collect();
        assert!(classes.iter().all(|c| *c == classes[0]), "root {root}: {classes:?}");
    }
}

#[test]
fn basin_labels_settle_within_horizon() {
    let rect = Rect::square(-0.65, 0.05);
    let params = ModelParams::default().with_u(0.09);
    let scan = |periods: usize| {
        let c = Classifier {
            horizon_periods: periods,
            ..Classifier::default()
        };
        basin_scan(&rect, 20, 20, &params, &periodic(), H, &c).unwrap().grid
    };
    let (a, b) = (scan(200), scan(400));
    let col = a.column("label").unwrap();
    let same = a.values.iter().zip(&b.values).filter(|(x, y)| x[col] == y[col]).count();
    assert!(
        same as f64 >= 0.99 * a.values.len() as f64,
        "{same} of {}",
        a.values.len()
    );
}

fn manifold(u: f64) -> ManifoldCurve {
    let map = healed(u, 1);
    let saddle = map.fixed_point(PlanarPoint::new(-0.22, -0.28)).unwrap();
    let pair = PlanarMapPair::healed(&map);
    let cfg = SCConfig {
        bounds: Some(Rect::square(-0.8, 0.2)),
        max_arclength: 3.0,
        ..SCConfig::default()
    };
    let grow = |dir| match grow_stable_manifold(&saddle, dir, &pair, &cfg) {
        Ok(c) => c,
        Err(Error::Stall { curve, .. }) => *curve,
        Err(e) => panic!("{e}"),
    };
    ManifoldCurve::join(&grow(-1.0), &grow(1.0))
}

#[test]
fn manifold_side_flips_at_escape_threshold() {
    let origin = PlanarPoint::new(-0.5, -0.5);
    let label = |u: f64| {
        let integ = Integrator::new(ModelParams::default().with_u(u), periodic(), H).unwrap();
        classify_point(&integ, origin, &Classifier::default()).unwrap().response
    };
    assert_eq!(label(0.085), Response::Small);
    assert_eq!(label(0.09), Response::Large);
    let below = point_side(&manifold(0.085), origin).unwrap();
    let above = point_side(&manifold(0.09), origin).unwrap();
    assert!(
        below != Side::On && above != Side::On && below != above,
        "{below:?} {above:?}"
    );
}
