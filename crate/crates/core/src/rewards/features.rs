use serde::{Deserialize, Serialize};

use super::scenario::{FeatureId, Scenario};
use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

/// Per-feature values of one trajectory, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

// Smoothing of Euclidean norms near zero, in m^2.
const NORM_EPS2: f64 = 1e-6;

#[inline]
fn smooth_norm(dx: f64, dy: f64) -> f64 {
    (dx * dx + dy * dy + NORM_EPS2).sqrt() - NORM_EPS2.sqrt()
}

/// Evaluates the scenario's feature set on `traj`.
///
/// * `goal:<label>`: time-weighted proximity of the team centroid to the
///   region center, `sum_i w_i exp(-d_i / s)` with `w_i` proportional to
///   `i`, so later waypoints count more.
/// * `formation`: `exp(-msd / s^2)`, where `msd` is the mean squared
///   deviation of every pairwise agent distance from its value at the
///   first waypoint. Always 1 for a single agent.
/// * `danger`: `exp(-P / s)` with `P` the time integral (trapezoidal) of
///   squared penetration depth into every danger zone, summed over agents.
/// * `efficiency`: `exp(-L / s)` with `L` the summed path length.
pub fn features(traj: &Trajectory, scenario: &Scenario) -> Result<FeatureVector> {
    if traj.num_agents() != scenario.num_agents {
        return Err(Error::Shape(format!(
            "trajectory has {} agents, scenario {} expects {}",
            traj.num_agents(),
            scenario.id,
            scenario.num_agents
        )));
    }
    let mut values = Vec::with_capacity(scenario.feature_set.len());
    for f in &scenario.feature_set {
        let v = match f {
            FeatureId::Goal(label) => {
                let g = scenario
                    .goal_index(label)
                    .ok_or_else(|| Error::InvalidScenario(format!("no goal region `{label}`")))?;
                goal_progress(traj, scenario.goal_regions[g].center, scenario.scales.goal)
            }
            FeatureId::Formation => formation(traj, scenario.scales.formation),
            FeatureId::Danger => danger(traj, scenario, scenario.scales.danger),
            FeatureId::Efficiency => (-path_length(traj) / scenario.scales.efficiency).exp(),
        };
        values.push(v);
    }
    Ok(FeatureVector { values })
}

fn goal_progress(traj: &Trajectory, center: [f64; 2], scale: f64) -> f64 {
    let t = traj.horizon();
    let total = (t * (t + 1) / 2) as f64;
    let mut acc = 0.0;
    for i in 1..=t {
        let c = traj.centroid(i);
        let d = smooth_norm(c[0] - center[0], c[1] - center[1]);
        acc += i as f64 * (-d / scale).exp();
    }
    acc / total
}

fn formation(traj: &Trajectory, scale: f64) -> f64 {
    let n = traj.num_agents();
    if n < 2 {
        return 1.0;
    }
    let dist = |i: usize, a: usize, b: usize| {
        let p = traj.point(i, a);
        let q = traj.point(i, b);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
    };
    let mut sum = 0.0;
    let mut count = 0usize;
    for a in 0..n {
        for b in a + 1..n {
            let nominal = dist(0, a, b);
            for i in 0..traj.len() {
                let dev = dist(i, a, b) - nominal;
                sum += dev * dev;
                count += 1;
            }
        }
    }
    (-(sum / count as f64) / (scale * scale)).exp()
}

fn danger(traj: &Trajectory, scenario: &Scenario, scale: f64) -> f64 {
    if scenario.danger_zones.is_empty() {
        return 1.0;
    }
    let penetration = |i: usize| {
        let mut p = 0.0;
        for a in 0..traj.num_agents() {
            let q = traj.point(i, a);
            for z in &scenario.danger_zones {
                let d = ((q[0] - z.center[0]).powi(2) + (q[1] - z.center[1]).powi(2)).sqrt();
                let depth = (z.radius - d).max(0.0);
                p += depth * depth;
            }
        }
        p
    };
    let mut integral = 0.0;
    let mut prev = penetration(0);
    for i in 1..traj.len() {
        let cur = penetration(i);
        integral += 0.5 * (prev + cur) * traj.dt();
        prev = cur;
    }
    (-integral / scale).exp()
}

fn path_length(traj: &Trajectory) -> f64 {
    let mut len = 0.0;
    for i in 1..traj.len() {
        for a in 0..traj.num_agents() {
            let p = traj.point(i - 1, a);
            let q = traj.point(i, a);
            len += smooth_norm(q[0] - p[0], q[1] - p[1]);
        }
    }
    len
}

/// Gradient of `R(traj; theta)` with respect to every waypoint coordinate,
/// laid out like [`Trajectory::as_slice`].
pub fn reward_gradient(traj: &Trajectory, theta: &[f64], scenario: &Scenario) -> Result<Vec<f64>> {
    if traj.num_agents() != scenario.num_agents || theta.len() != scenario.feature_set.len() {
        return Err(Error::Shape("gradient inputs do not match the scenario".into()));
    }
    let mut grad = vec![0.0; traj.as_slice().len()];
    for (f, w) in scenario.feature_set.iter().zip(theta) {
        if *w == 0.0 {
            continue;
        }
        match f {
            FeatureId::Goal(label) => {
                let g = scenario
                    .goal_index(label)
                    .ok_or_else(|| Error::InvalidScenario(format!("no goal region `{label}`")))?;
                goal_gradient(traj, scenario.goal_regions[g].center, scenario.scales.goal, *w, &mut grad);
            }
            FeatureId::Formation => formation_gradient(traj, scenario.scales.formation, *w, &mut grad),
            FeatureId::Danger => danger_gradient(traj, scenario, *w, &mut grad),
            FeatureId::Efficiency => efficiency_gradient(traj, scenario.scales.efficiency, *w, &mut grad),
        }
    }
    Ok(grad)
}

#[inline]
fn idx(traj: &Trajectory, step: usize, agent: usize) -> usize {
    (step * traj.num_agents() + agent) * 2
}

fn goal_gradient(traj: &Trajectory, center: [f64; 2], scale: f64, w: f64, grad: &mut [f64]) {
    let t = traj.horizon();
    let total = (t * (t + 1) / 2) as f64;
    let n = traj.num_agents();
    for i in 1..=t {
        let c = traj.centroid(i);
        let (dx, dy) = (c[0] - center[0], c[1] - center[1]);
        let r = (dx * dx + dy * dy + NORM_EPS2).sqrt();
        let d = r - NORM_EPS2.sqrt();
        let coef = -w * (i as f64 / total) * (-d / scale).exp() / (scale * r * n as f64);
        for a in 0..n {
            let k = idx(traj, i, a);
            grad[k] += coef * dx;
            grad[k + 1] += coef * dy;
        }
    }
}

fn formation_gradient(traj: &Trajectory, scale: f64, w: f64, grad: &mut [f64]) {
    let n = traj.num_agents();
    if n < 2 {
        return;
    }
    let value = formation(traj, scale);
    let pairs = n * (n - 1) / 2;
    let count = (pairs * traj.len()) as f64;
    // dF/dx = -F / s^2 * dM/dx, M = mean squared deviation.
    let coef = -w * value / (scale * scale) * 2.0 / count;
    for a in 0..n {
        for b in a + 1..n {
            let unit = |i: usize| {
                let p = traj.point(i, a);
                let q = traj.point(i, b);
                let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
                let d = (dx * dx + dy * dy).sqrt();
                if d > 0.0 {
                    (d, dx / d, dy / d)
                } else {
                    (0.0, 0.0, 0.0)
                }
            };
            let (d0, u0x, u0y) = unit(0);
            let mut dev_sum = 0.0;
            for i in 1..traj.len() {
                let (d, ux, uy) = unit(i);
                let dev = d - d0;
                dev_sum += dev;
                let (ka, kb) = (idx(traj, i, a), idx(traj, i, b));
                grad[ka] += coef * dev * ux;
                grad[ka + 1] += coef * dev * uy;
                grad[kb] -= coef * dev * ux;
                grad[kb + 1] -= coef * dev * uy;
            }
            let (ka, kb) = (idx(traj, 0, a), idx(traj, 0, b));
            grad[ka] -= coef * dev_sum * u0x;
            grad[ka + 1] -= coef * dev_sum * u0y;
            grad[kb] += coef * dev_sum * u0x;
            grad[kb + 1] += coef * dev_sum * u0y;
        }
    }
}

fn danger_gradient(traj: &Trajectory, scenario: &Scenario, w: f64, grad: &mut [f64]) {
    if scenario.danger_zones.is_empty() {
        return;
    }
    let scale = scenario.scales.danger;
    let value = danger(traj, scenario, scale);
    let last = traj.len() - 1;
    for i in 0..traj.len() {
        let weight = if i == 0 || i == last { 0.5 } else { 1.0 } * traj.dt();
        for a in 0..traj.num_agents() {
            let q = traj.point(i, a);
            let k = idx(traj, i, a);
            for z in &scenario.danger_zones {
                let (dx, dy) = (q[0] - z.center[0], q[1] - z.center[1]);
                let d = (dx * dx + dy * dy).sqrt();
                if d < z.radius && d > 0.0 {
                    // d(depth^2)/dq = -2 (r - d) (q - c) / d
                    let coef = -w * value / scale * weight * (-2.0 * (z.radius - d) / d);
                    grad[k] += coef * dx;
                    grad[k + 1] += coef * dy;
                }
            }
        }
    }
}

fn efficiency_gradient(traj: &Trajectory, scale: f64, w: f64, grad: &mut [f64]) {
    let value = (-path_length(traj) / scale).exp();
    let coef = -w * value / scale;
    for i in 1..traj.len() {
        for a in 0..traj.num_agents() {
            let p = traj.point(i - 1, a);
            let q = traj.point(i, a);
            let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
            let r = (dx * dx + dy * dy + NORM_EPS2).sqrt();
            let (kp, kq) = (idx(traj, i - 1, a), idx(traj, i, a));
            grad[kq] += coef * dx / r;
            grad[kq + 1] += coef * dy / r;
            grad[kp] -= coef * dx / r;
            grad[kp + 1] -= coef * dy / r;
        }
    }
}
