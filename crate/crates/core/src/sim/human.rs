//! Greedy, noisily rational simulated corrector.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::evidence::EvidenceConfig;
use crate::rewards::{reward, reward_gradient, HumanProfile, RewardParams, Scenario};
use crate::trajectory::{add_displacement, Correction, DeformationKernel, Point, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanConfig {
    /// Standard deviation of the Gaussian noise added to each force component.
    pub sigma: f64,
    pub deadband: f64,
    pub cooldown: usize,
    pub lookahead: usize,
}

impl HumanConfig {
    pub fn new(profile: &HumanProfile, sigma: f64) -> Self {
        Self {
            sigma,
            deadband: profile.deadband,
            cooldown: profile.cooldown,
            lookahead: profile.lookahead,
        }
    }
}

/// What the corrector can see of the episode.
#[derive(Debug, Clone, Copy)]
pub struct HumanView<'a> {
    pub clock: usize,
    /// Trajectory after all corrections so far.
    pub current: &'a Trajectory,
    pub last_correction_clock: Option<usize>,
}

/// The best single force on one agent at one time and its evidence gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposedForce {
    pub force: Point,
    pub gain: f64,
}

fn project(f: Point, bound: f64) -> Point {
    let n = (f[0] * f[0] + f[1] * f[1]).sqrt();
    if n > bound {
        [f[0] * bound / n, f[1] * bound / n]
    } else {
        f
    }
}

/// Maximizes the evidence increase of one more correction on `agent` at
/// `timestep`, relative to the same correction with zero force:
/// `c * (R(deformed) - R(current)) - gamma * |a|^2`, where `c` is the weight
/// the newest trajectory carries in the evidence.
#[allow(clippy::too_many_arguments)]
pub fn best_force(
    current: &Trajectory,
    timestep: usize,
    agent: usize,
    theta: &RewardParams,
    cfg: &EvidenceConfig,
    kernel: &DeformationKernel,
    force_bound: f64,
    scenario: &Scenario,
) -> Result<ProposedForce> {
    let weight = cfg.lambda + if cfg.include_final_reward { 1.0 } else { 0.0 };
    let profile = kernel.profile_at(timestep);
    let base = reward(current, theta, scenario)?;
    let n = current.num_agents();
    let eval = |a: Point| -> Result<(f64, Trajectory)> {
        let mut t = current.clone();
        add_displacement(&mut t, agent, &profile, a);
        let r = reward(&t, theta, scenario)?;
        Ok((weight * (r - base) - cfg.gamma * (a[0] * a[0] + a[1] * a[1]), t))
    };

    let mut a = [0.0, 0.0];
    let (mut value, mut traj) = eval(a)?;
    let mut step = 0.1;
    for _ in 0..200 {
        let g = reward_gradient(&traj, &theta.theta, scenario)?;
        let mut grad = [-2.0 * cfg.gamma * a[0], -2.0 * cfg.gamma * a[1]];
        for (i, w) in profile.iter().enumerate() {
            let k = (i * n + agent) * 2;
            grad[0] += weight * w * g[k];
            grad[1] += weight * w * g[k + 1];
        }
        if grad == [0.0, 0.0] {
            break;
        }
        let mut improved = None;
        while step > 1e-12 {
            let cand = project([a[0] + step * grad[0], a[1] + step * grad[1]], force_bound);
            let (v, t) = eval(cand)?;
            if v > value {
                improved = Some((cand, v, t));
                step *= 1.5;
                break;
            }
            step *= 0.5;
        }
        match improved {
            Some((cand, v, t)) => {
                let gain = v - value;
                a = cand;
                value = v;
                traj = t;
                if gain < 1e-12 {
                    break;
                }
            }
            None => break,
        }
    }
    Ok(ProposedForce { force: a, gain: value })
}

/// Proposes the next correction, or `None` when the corrector is satisfied
/// or still cooling down.
///
/// The correction acts `lookahead` steps ahead of the clock (capped at the
/// last interior waypoint) on whichever agent yields the largest gain.
/// Ties go to the lower agent index. Gaussian noise is added after the
/// choice and the result is clipped to the force bound.
#[allow(clippy::too_many_arguments)]
pub fn simulated_human<R: Rng>(
    true_theta: &RewardParams,
    view: HumanView<'_>,
    cfg: &HumanConfig,
    evidence: &EvidenceConfig,
    kernel: &DeformationKernel,
    scenario: &Scenario,
    rng: &mut R,
) -> Result<Option<Correction>> {
    if let Some(last) = view.last_correction_clock {
        if view.clock < last + cfg.cooldown {
            return Ok(None);
        }
    }
    let last_interior = scenario.horizon - 1;
    if view.clock + 1 > last_interior {
        return Ok(None);
    }
    let timestep = (view.clock + cfg.lookahead.max(1)).min(last_interior);
    let bound = scenario.hyperparameters.force_bound;

    let mut best: Option<(usize, ProposedForce)> = None;
    for agent in 0..scenario.num_agents {
        let p = best_force(view.current, timestep, agent, true_theta, evidence, kernel, bound, scenario)?;
        if best.as_ref().is_none_or(|(_, b)| p.gain > b.gain) {
            best = Some((agent, p));
        }
    }
    let (agent, p) = best.expect("at least one agent");
    if p.gain <= cfg.deadband {
        return Ok(None);
    }
    let mut force = p.force;
    if cfg.sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.sigma).expect("finite sigma");
        force[0] += normal.sample(rng);
        force[1] += normal.sample(rng);
    }
    Ok(Some(Correction::new(timestep, agent, project(force, bound))))
}
