//! Waypoint-parameterized trajectory optimization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rewards::{reward, reward_gradient, RewardParams, Scenario};
use crate::trajectory::{Point, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub iterations: usize,
    pub step_size: f64,
    /// Stop once an accepted step improves the reward by less than this.
    pub tolerance: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            step_size: 0.05,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub trajectory: Trajectory,
    pub reward: f64,
    /// False when the iteration budget ran out before convergence.
    pub converged: bool,
}

/// Straight rigid-formation motion of the whole team toward `target`
/// (the centroid heads there at `max_step` per step, then dwells).
fn rigid_approach(history: &[Vec<Point>], target: Option<Point>, scenario: &Scenario) -> Result<Trajectory> {
    let mut waypoints: Vec<Vec<Point>> = history.to_vec();
    let mut current = history.last().expect("non-empty history").clone();
    let n = current.len() as f64;
    while waypoints.len() <= scenario.horizon {
        if let Some(goal) = target {
            let c = current.iter().fold([0.0, 0.0], |acc, p| [acc[0] + p[0] / n, acc[1] + p[1] / n]);
            let (dx, dy) = (goal[0] - c[0], goal[1] - c[1]);
            let dist = (dx * dx + dy * dy).sqrt();
            if dist > 0.0 {
                let s = scenario.max_step.min(dist) / dist;
                for p in current.iter_mut() {
                    *p = scenario.bounds.clamp([p[0] + s * dx, p[1] + s * dy]);
                }
            }
        }
        waypoints.push(current.clone());
    }
    Trajectory::new(waypoints, scenario.dt)
}

/// Restores per-step length limits and workspace bounds on the free
/// waypoints (`first_free..`), sweeping forward in time.
fn restore_feasibility(traj: &mut Trajectory, first_free: usize, scenario: &Scenario) {
    for i in first_free..traj.len() {
        for a in 0..traj.num_agents() {
            let prev = traj.point(i - 1, a);
            let mut p = scenario.bounds.clamp(traj.point(i, a));
            let (dx, dy) = (p[0] - prev[0], p[1] - prev[1]);
            let len = (dx * dx + dy * dy).sqrt();
            if len > scenario.max_step {
                let s = scenario.max_step / len;
                p = [prev[0] + s * dx, prev[1] + s * dy];
            }
            traj.set_point(i, a, p);
        }
    }
}

/// Plans the remainder of the horizon maximizing `R(xi; theta)`.
///
/// `history` holds the executed joint states `0..=clock`; they are kept
/// fixed and the rest is optimized by projected gradient ascent starting
/// from the best straight-line approach to any goal region (or resting in
/// place). The terminal waypoint is free.
pub fn plan(
    theta: &RewardParams,
    scenario: &Scenario,
    history: &[Vec<Point>],
    cfg: &PlannerConfig,
) -> Result<PlanOutcome> {
    if history.is_empty() || history.len() > scenario.horizon + 1 {
        return Err(Error::Shape(format!(
            "history of {} states for horizon {}",
            history.len(),
            scenario.horizon
        )));
    }
    if history.iter().any(|s| s.len() != scenario.num_agents) {
        return Err(Error::Shape("history agent count differs from scenario".into()));
    }

    let mut best: Option<(Trajectory, f64)> = None;
    let targets = scenario
        .goal_regions
        .iter()
        .map(|g| Some(g.center))
        .chain(std::iter::once(None));
    for target in targets {
        let traj = rigid_approach(history, target, scenario)?;
        let r = reward(&traj, theta, scenario)?;
        if best.as_ref().is_none_or(|(_, b)| r > *b) {
            best = Some((traj, r));
        }
    }
    let (mut traj, mut value) = best.expect("at least one initialization");
    let first_free = history.len();
    if first_free > scenario.horizon {
        return Ok(PlanOutcome {
            trajectory: traj,
            reward: value,
            converged: true,
        });
    }
    let free_start = first_free * 2 * scenario.num_agents;

    let mut step = cfg.step_size;
    let mut converged = false;
    for _ in 0..cfg.iterations {
        let grad = reward_gradient(&traj, &theta.theta, scenario)?;
        let norm2: f64 = grad[free_start..].iter().map(|g| g * g).sum();
        if norm2 == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = None;
        for _ in 0..40 {
            let mut candidate = traj.clone();
            for (x, g) in candidate.as_mut_slice()[free_start..].iter_mut().zip(&grad[free_start..]) {
                *x += step * g;
            }
            restore_feasibility(&mut candidate, first_free, scenario);
            let r = reward(&candidate, theta, scenario)?;
            if r > value {
                accepted = Some((candidate, r));
                step *= 1.5;
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((candidate, r)) => {
                let gain = r - value;
                traj = candidate;
                value = r;
                if gain < cfg.tolerance {
                    converged = true;
                    break;
                }
            }
            None => {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        log::warn!("planner for scenario {} stopped at the iteration budget", scenario.id);
    }
    Ok(PlanOutcome {
        trajectory: traj,
        reward: value,
        converged,
    })
}

/// The robot's initial plan from the scenario's start under `theta`.
pub fn initial_plan(theta: &RewardParams, scenario: &Scenario, cfg: &PlannerConfig) -> Result<Trajectory> {
    Ok(plan(theta, scenario, std::slice::from_ref(&scenario.starts), cfg)?.trajectory)
}
