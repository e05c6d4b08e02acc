mod common;

use proptest::prelude::*;

use seqcorr::rewards::{features, reward, RewardParams, Scenario};
use seqcorr::sim::Engine;
use seqcorr::trajectory::Trajectory;
use seqcorr::Error;

/// Squared penetration integrated with the trapezoid rule over `samples`
/// points per segment, per agent.
fn danger_oracle(traj: &Trajectory, scenario: &Scenario, samples: usize) -> f64 {
    let depth2 = |p: [f64; 2]| -> f64 {
        scenario
            .danger_zones
            .iter()
            .map(|z| {
                let d = ((p[0] - z.center[0]).powi(2) + (p[1] - z.center[1]).powi(2)).sqrt();
                (z.radius - d).max(0.0).powi(2)
            })
            .sum()
    };
    let h = traj.dt() / samples as f64;
    let mut integral = 0.0;
    for a in 0..traj.num_agents() {
        for i in 1..traj.len() {
            let (p, q) = (traj.point(i - 1, a), traj.point(i, a));
            for s in 0..samples {
                let at = |u: f64| [p[0] + u * (q[0] - p[0]), p[1] + u * (q[1] - p[1])];
                let u0 = s as f64 / samples as f64;
                let u1 = (s + 1) as f64 / samples as f64;
                integral += 0.5 * h * (depth2(at(u0)) + depth2(at(u1)));
            }
        }
    }
    (-integral / scenario.scales.danger).exp()
}

fn danger_index(s: &Scenario) -> usize {
    s.feature_set.iter().position(|f| f.to_string() == "danger").unwrap()
}

#[test]
fn initial_plan_danger_matches_trapezoid_oracle() {
    let scenario = common::scenario("single_agent");
    // A straight line from the start through the hazard to the left goal.
    let through = Trajectory::straight_line(&scenario.starts, &[[-1.5, 2.0]], scenario.horizon, scenario.dt).unwrap();
    let phi = features(&through, &scenario).unwrap();
    let d = phi.values[danger_index(&scenario)];
    assert!(d < 1.0);
    assert!((d - danger_oracle(&through, &scenario, 1)).abs() < 1e-12);
    // Finer sampling sees the same hazard, not a different one.
    assert!(danger_oracle(&through, &scenario, 200) < 1.0);

    let engine = Engine::with_defaults(scenario.clone(), None).unwrap();
    let plan = engine.initial_plan();
    let d = features(plan, &scenario).unwrap().values[danger_index(&scenario)];
    assert!((d - danger_oracle(plan, &scenario, 1)).abs() < 1e-12);

    let all_ones = RewardParams::new(vec![1.0; scenario.num_features()]);
    let sum: f64 = features(&through, &scenario).unwrap().values.iter().sum();
    assert!((reward(&through, &all_ones, &scenario).unwrap() - sum).abs() < 1e-12);
}

#[test]
fn feature_examples() {
    let scenario = common::scenario("two_agent");
    let rigid = Trajectory::straight_line(&scenario.starts, &[[1.5, 2.0], [2.5, 2.0]], scenario.horizon, scenario.dt)
        .unwrap();
    let phi = features(&rigid, &scenario).unwrap();
    let formation = scenario.feature_set.iter().position(|f| f.to_string() == "formation").unwrap();
    assert_eq!(phi.values[formation], 1.0);

    let single = common::scenario("single_agent");
    let phi = features(&rigid, &single);
    assert!(matches!(phi, Err(Error::Shape(_))));
}

#[test]
fn reward_examples() {
    let scenario = common::scenario("single_agent");
    let traj = Trajectory::straight_line(&scenario.starts, &[[1.0, 1.0]], scenario.horizon, scenario.dt).unwrap();
    let phi = features(&traj, &scenario).unwrap();
    let basis = RewardParams::new(vec![1.0, 0.0, 0.0, 0.0]);
    assert_eq!(reward(&traj, &basis, &scenario).unwrap(), phi.values[0]);
    assert_eq!(reward(&traj, &RewardParams::new(vec![0.0; 4]), &scenario).unwrap(), 0.0);
    assert!(matches!(
        reward(&traj, &RewardParams::new(vec![1.0; 3]), &scenario),
        Err(Error::Shape(_))
    ));
}

#[test]
fn scenario_validation() {
    let good = common::scenario("two_agent");
    let mut bad = good.clone();
    bad.candidate_thetas.clear();
    assert!(matches!(bad.validate(), Err(Error::InvalidScenario(_))));
    let mut bad = good.clone();
    bad.candidate_thetas[0].weights.pop();
    assert!(bad.validate().is_err());
    let mut bad = good.clone();
    bad.goal_regions[0].radius = 0.0;
    assert!(bad.validate().is_err());
    let mut bad = good.clone();
    bad.schema_version = 99;
    assert!(bad.validate().is_err());
    let round = Scenario::from_json(&good.to_json_pretty()).unwrap();
    assert_eq!(round, good);
}

fn in_bounds(agents: usize, horizon: usize) -> impl Strategy<Value = Trajectory> {
    prop::collection::vec(prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), agents), horizon + 1).prop_map(|w| {
        Trajectory::new(w.into_iter().map(|s| s.into_iter().map(|(x, y)| [x, y]).collect()).collect(), 0.5).unwrap()
    })
}

proptest! {
    #[test]
    fn features_stay_in_unit_interval(traj in in_bounds(2, 12)) {
        let phi = features(&traj, &common::scenario("two_agent")).unwrap();
        prop_assert!(phi.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn single_agent_features_in_unit_interval(traj in in_bounds(1, 12)) {
        let phi = features(&traj, &common::scenario("single_agent")).unwrap();
        prop_assert!(phi.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn reward_is_linear_in_theta(
        traj in in_bounds(2, 12),
        a in prop::collection::vec(-20.0f64..20.0, 4),
        b in prop::collection::vec(-20.0f64..20.0, 4),
        c in -10.0f64..10.0,
    ) {
        let s = common::scenario("two_agent");
        let r = |w: Vec<f64>| reward(&traj, &RewardParams::new(w), &s).unwrap();
        let ra = r(a.clone());
        let rb = r(b.clone());
        let scaled = r(a.iter().map(|v| c * v).collect());
        prop_assert!((scaled - c * ra).abs() <= 1e-12 * (c * ra).abs().max(1e-12));
        let sum = r(a.iter().zip(&b).map(|(x, y)| x + y).collect());
        prop_assert!((sum - (ra + rb)).abs() <= 1e-12 * (ra.abs() + rb.abs()).max(1.0));
    }

    #[test]
    fn formation_ignores_rigid_translation(traj in in_bounds(2, 12), dx in -2.0f64..2.0, dy in -2.0f64..2.0) {
        let s = common::scenario("two_agent");
        let idx = s.feature_set.iter().position(|f| f.to_string() == "formation").unwrap();
        let moved = Trajectory::new(
            traj.waypoints().into_iter().map(|st| st.into_iter().map(|p| [p[0] + dx, p[1] + dy]).collect()).collect(),
            traj.dt(),
        )
        .unwrap();
        let f0 = features(&traj, &s).unwrap().values[idx];
        let f1 = features(&moved, &s).unwrap().values[idx];
        prop_assert!((f0 - f1).abs() <= 1e-9);
    }
}
