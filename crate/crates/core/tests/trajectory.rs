mod common;

use proptest::prelude::*;

use seqcorr::trajectory::{
    deform, make_kernel, propagate_sequence, Correction, DeformationKernel, SmoothnessOrder, Trajectory,
};
use seqcorr::Error;

/// Dense Gauss-Jordan inverse, independent of the kernel's tridiagonal solver.
fn invert(mut a: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for c in 0..n {
        let pivot = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        a.swap(c, pivot);
        inv.swap(c, pivot);
        let d = a[c][c];
        for j in 0..n {
            a[c][j] /= d;
            inv[c][j] /= d;
        }
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                for j in 0..n {
                    a[r][j] -= f * a[c][j];
                    inv[r][j] -= f * inv[c][j];
                }
            }
        }
    }
    inv
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect()).collect()
}

/// Profile of a correction at `t` built from the dense inverse of the
/// squared finite-difference operator on the interior waypoints.
fn oracle_profile(waypoints: usize, mu: f64, order: SmoothnessOrder, t: usize) -> Vec<f64> {
    let m = waypoints - 2;
    // First differences over the clamped chain: (m + 1) x m.
    let k1: Vec<Vec<f64>> = (0..=m)
        .map(|r| (0..m).map(|c| if c == r { 1.0 } else if c + 1 == r { -1.0 } else { 0.0 }).collect())
        .collect();
    let l: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| (0..=m).map(|r| k1[r][i] * k1[r][j]).sum()).collect()).collect();
    let a = match order {
        SmoothnessOrder::Velocity => l,
        SmoothnessOrder::Acceleration => matmul(&l, &l),
    };
    let inv = invert(a);
    let center = (m - 1) / 2;
    let column: Vec<f64> = (0..m).map(|i| inv[i][center]).collect();
    let peak = column.iter().cloned().fold(f64::MIN, f64::max);
    let anchor = column.iter().position(|v| *v == peak).unwrap() + 1;
    let mut out = vec![0.0; waypoints];
    for (i, slot) in out.iter_mut().enumerate().take(waypoints - 1).skip(1) {
        let src = i as isize - t as isize + anchor as isize;
        if src >= 1 && (src as usize) <= m {
            *slot = mu * column[src as usize - 1] / peak;
        }
    }
    out
}

#[test]
fn kernel_matches_dense_inverse() {
    for waypoints in 3..=25 {
        for order in [SmoothnessOrder::Velocity, SmoothnessOrder::Acceleration] {
            let k = make_kernel(waypoints, 0.7, order).unwrap();
            for t in 1..waypoints - 1 {
                let got = k.profile_at(t);
                let want = oracle_profile(waypoints, 0.7, order, t);
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).abs() < 1e-10, "waypoints {waypoints} order {order:?} t {t}");
                }
            }
        }
    }
}

#[test]
fn three_corrections_on_two_agent_scenario_match_stepwise_oracle() {
    let scenario = common::scenario("two_agent");
    let waypoints = scenario.horizon + 1;
    let initial = Trajectory::straight_line(&scenario.starts, &[[-0.5, 2.0], [0.5, 2.0]], scenario.horizon, scenario.dt)
        .unwrap();
    let kernel = scenario.kernel().unwrap();
    let corrections = [
        Correction::new(3, 0, [0.4, -0.2]),
        Correction::new(5, 1, [-0.3, 0.9]),
        Correction::new(5, 0, [0.1, 0.1]),
    ];
    let chain = propagate_sequence(&initial, &corrections, &kernel).unwrap();
    assert_eq!(chain.len(), 3);

    // Hand-rolled: displacement fields accumulate per agent.
    let mut points: Vec<Vec<[f64; 2]>> = initial.waypoints();
    for (i, c) in corrections.iter().enumerate() {
        let profile = oracle_profile(
            waypoints,
            scenario.hyperparameters.mu,
            scenario.hyperparameters.kernel_order,
            c.timestep,
        );
        for (s, w) in profile.iter().enumerate() {
            points[s][c.agent][0] += w * c.force[0];
            points[s][c.agent][1] += w * c.force[1];
        }
        let got = chain[i].waypoints();
        for s in 0..waypoints {
            for a in 0..2 {
                for d in 0..2 {
                    assert!((got[s][a][d] - points[s][a][d]).abs() < 1e-10);
                }
            }
        }
    }
}

#[test]
fn propagate_rejects_bad_corrections() {
    let traj = Trajectory::straight_line(&[[0.0, 0.0]], &[[1.0, 0.0]], 4, 0.5).unwrap();
    let kernel = make_kernel(5, 1.0, SmoothnessOrder::Acceleration).unwrap();
    for c in [
        Correction::new(0, 0, [1.0, 0.0]),
        Correction::new(4, 0, [1.0, 0.0]),
        Correction::new(2, 1, [1.0, 0.0]),
    ] {
        assert!(matches!(deform(&traj, &c, &kernel), Err(Error::Shape(_))));
    }
    let short = make_kernel(4, 1.0, SmoothnessOrder::Acceleration).unwrap();
    assert!(matches!(deform(&traj, &Correction::new(2, 0, [1.0, 0.0]), &short), Err(Error::Shape(_))));
}

#[test]
fn trajectory_validation() {
    assert!(Trajectory::new(vec![vec![[0.0, 0.0]]], 0.5).is_err());
    assert!(Trajectory::new(vec![vec![[0.0, 0.0]], vec![[0.0, 0.0], [1.0, 1.0]]], 0.5).is_err());
    assert!(Trajectory::new(vec![vec![[0.0, f64::NAN]], vec![[0.0, 0.0]]], 0.5).is_err());
    let t = Trajectory::new(vec![vec![[0.0, 0.0], [1.0, 1.0]]; 3], 0.5).unwrap();
    assert_eq!((t.horizon(), t.len(), t.num_agents(), t.state_dim()), (2, 3, 2, 4));
}

fn case() -> impl Strategy<Value = (Trajectory, DeformationKernel, usize, usize, usize, [f64; 2], [f64; 2])> {
    (3usize..24, 1usize..4, prop::bool::ANY, 0.05f64..3.0).prop_flat_map(|(horizon, agents, acc, mu)| {
        let order = if acc { SmoothnessOrder::Acceleration } else { SmoothnessOrder::Velocity };
        (
            prop::collection::vec(prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), agents), horizon + 1),
            Just(make_kernel(horizon + 1, mu, order).unwrap()),
            0..agents,
            1..horizon,
            1..horizon,
            (-2.0f64..2.0, -2.0f64..2.0),
            (-2.0f64..2.0, -2.0f64..2.0),
        )
            .prop_map(move |(w, k, agent, t1, t2, f1, f2)| {
                let w = w.into_iter().map(|s| s.into_iter().map(|(x, y)| [x, y]).collect()).collect();
                (Trajectory::new(w, 0.5).unwrap(), k, agents, agent, t1 * 1000 + t2, [f1.0, f1.1], [f2.0, f2.1])
            })
    })
}

proptest! {
    #[test]
    fn deformation_invariants((traj, kernel, agents, agent, ts, f1, f2) in case(), alpha in -3.0f64..3.0) {
        let (t1, t2) = (ts / 1000, ts % 1000);
        let horizon = traj.horizon();
        let out = deform(&traj, &Correction::new(t1, agent, f1), &kernel).unwrap();

        prop_assert_eq!(&deform(&traj, &Correction::new(t1, agent, [0.0, 0.0]), &kernel).unwrap(), &traj);
        for a in 0..agents {
            prop_assert_eq!(out.point(0, a), traj.point(0, a));
            prop_assert_eq!(out.point(horizon, a), traj.point(horizon, a));
            if a != agent {
                for s in 0..=horizon {
                    prop_assert_eq!(out.point(s, a), traj.point(s, a));
                }
            }
        }

        let scaled = deform(&traj, &Correction::new(t1, agent, [alpha * f1[0], alpha * f1[1]]), &kernel).unwrap();
        let scale = out.as_slice().iter().zip(traj.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        for ((s, o), x) in scaled.as_slice().iter().zip(out.as_slice()).zip(traj.as_slice()) {
            let lhs = s - x;
            let rhs = alpha * (o - x);
            // Relative to the displacement, plus the rounding of adding it to x.
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (alpha.abs() * scale).max(1e-300) + 4.0 * f64::EPSILON * x.abs());
        }

        let a = Correction::new(t1, agent, f1);
        let b = Correction::new(t2, agent, f2);
        let ab = deform(&deform(&traj, &a, &kernel).unwrap(), &b, &kernel).unwrap();
        let ba = deform(&deform(&traj, &b, &kernel).unwrap(), &a, &kernel).unwrap();
        for (x, y) in ab.as_slice().iter().zip(ba.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }

        let chain = propagate_sequence(&traj, &[a, b], &kernel).unwrap();
        prop_assert_eq!(&chain[0], &out);
        prop_assert_eq!(&chain[1], &ab);
    }

    #[test]
    fn kernel_shape(waypoints in 3usize..40, mu in 0.01f64..5.0, acc in prop::bool::ANY, frac in 0.0f64..1.0) {
        let order = if acc { SmoothnessOrder::Acceleration } else { SmoothnessOrder::Velocity };
        let k = make_kernel(waypoints, mu, order).unwrap();
        let t = 1 + ((waypoints - 2) as f64 * frac).floor().min((waypoints - 3) as f64) as usize;
        let p = k.profile_at(t);
        prop_assert_eq!(p[0], 0.0);
        prop_assert_eq!(p[waypoints - 1], 0.0);
        prop_assert!((p[t] - mu).abs() <= 1e-12 * mu);
        for i in 1..=t {
            prop_assert!(p[i] >= p[i - 1]);
        }
        for i in t..waypoints - 1 {
            prop_assert!(p[i] >= p[i + 1]);
        }
    }
}
