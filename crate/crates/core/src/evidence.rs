//! Accumulated evidence and the likelihood models built on it.
//!
//! For deformed trajectories `xi_1..xi_K` produced by corrections
//! `a_1..a_K`, the accumulated evidence under `theta` is
//!
//! ```text
//! D = lambda * sum_t alpha^(K-t) R(xi_t) - gamma * sum_t |a_t|^2  [+ R(xi_K)]
//! ```
//!
//! where the bracketed term is enabled by `include_final_reward`. The
//! sequence likelihood is `exp(D - D*_K)`, with `D*_K` the largest evidence
//! any `K` corrections could reach (see [`crate::dstar`]). All belief
//! arithmetic happens in log space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rewards::{features, reward, RewardParams, Scenario};
use crate::trajectory::{propagate_sequence, Correction, Trajectory};

/// Log weights below this are clamped so beliefs can recover.
pub const LOG_FLOOR: f64 = -700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvidenceConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub include_final_reward: bool,
}

impl Default for EvidenceConfig {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            gamma: 0.1,
            lambda: 1.0,
            include_final_reward: false,
        }
    }
}

impl EvidenceConfig {
    pub fn from_scenario(scenario: &Scenario) -> Self {
        let h = &scenario.hyperparameters;
        Self {
            alpha: h.alpha,
            gamma: h.gamma,
            lambda: h.lambda,
            include_final_reward: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidHyperparameter(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.lambda >= 0.0) {
            return Err(Error::InvalidHyperparameter("gamma and lambda must be non-negative".into()));
        }
        Ok(())
    }

    /// Evidence from per-trajectory rewards and per-correction efforts.
    pub fn combine(&self, rewards: &[f64], total_effort: f64) -> f64 {
        let k = rewards.len();
        let mut decayed = 0.0;
        for (t, r) in rewards.iter().enumerate() {
            decayed += self.alpha.powi((k - 1 - t) as i32) * r;
        }
        let mut d = self.lambda * decayed - self.gamma * total_effort;
        if self.include_final_reward {
            d += rewards[k - 1];
        }
        d
    }
}

fn check_pair(trajs: &[Trajectory], corrections: &[Correction]) -> Result<()> {
    if corrections.is_empty() {
        return Err(Error::EmptySequence);
    }
    if trajs.len() != corrections.len() {
        return Err(Error::Shape(format!(
            "{} deformed trajectories for {} corrections",
            trajs.len(),
            corrections.len()
        )));
    }
    Ok(())
}

/// Accumulated evidence `D` of a propagated correction sequence.
pub fn accumulated_evidence(
    trajs: &[Trajectory],
    corrections: &[Correction],
    theta: &RewardParams,
    cfg: &EvidenceConfig,
    scenario: &Scenario,
) -> Result<f64> {
    check_pair(trajs, corrections)?;
    let rewards = trajs
        .iter()
        .map(|t| reward(t, theta, scenario))
        .collect::<Result<Vec<_>>>()?;
    let effort = corrections.iter().map(Correction::effort).sum();
    Ok(cfg.combine(&rewards, effort))
}

/// Energy `E` including the gap to an intended trajectory:
/// `E = D_final - R(intended)`, where `D_final` always includes the
/// final-trajectory reward term.
pub fn energy(
    trajs: &[Trajectory],
    corrections: &[Correction],
    intended: &Trajectory,
    theta: &RewardParams,
    cfg: &EvidenceConfig,
    scenario: &Scenario,
) -> Result<f64> {
    let cfg = EvidenceConfig {
        include_final_reward: true,
        ..*cfg
    };
    let d = accumulated_evidence(trajs, corrections, theta, &cfg, scenario)?;
    Ok(d - reward(intended, theta, scenario)?)
}

/// `log P(corrections | theta)` under the Laplace-approximated sequence
/// model: `D(observed) - D*_K(theta)`.
pub fn log_likelihood_sequence(
    corrections: &[Correction],
    initial: &Trajectory,
    theta: &RewardParams,
    dstar: f64,
    cfg: &EvidenceConfig,
    scenario: &Scenario,
) -> Result<f64> {
    let trajs = propagate_sequence(initial, corrections, &scenario.kernel()?)?;
    let d = accumulated_evidence(&trajs, corrections, theta, cfg, scenario)?;
    Ok(d - dstar)
}

/// Unnormalized log-likelihood of one correction treated in isolation:
/// `R(deformed) - gamma * |deformed - previous|^2`.
pub fn log_likelihood_independent(
    deformed: &Trajectory,
    previous: &Trajectory,
    theta: &RewardParams,
    gamma: f64,
    scenario: &Scenario,
) -> Result<f64> {
    let shift = deformed.squared_distance(previous)?;
    Ok(reward(deformed, theta, scenario)? - gamma * shift)
}

/// Unnormalized log-likelihood of the final corrected trajectory given
/// the initial plan.
pub fn log_likelihood_final(
    last: &Trajectory,
    initial: &Trajectory,
    theta: &RewardParams,
    gamma: f64,
    scenario: &Scenario,
) -> Result<f64> {
    log_likelihood_independent(last, initial, theta, gamma, scenario)
}

/// Whole-episode log-likelihood of the independence model, computed in
/// one pass from feature values and the kernel's displacement profile.
pub fn independent_episode_log_likelihood(
    initial: &Trajectory,
    corrections: &[Correction],
    theta: &RewardParams,
    gamma: f64,
    scenario: &Scenario,
) -> Result<f64> {
    let kernel = scenario.kernel()?;
    let trajs = propagate_sequence(initial, corrections, &kernel)?;
    let mut total = 0.0;
    for (traj, c) in trajs.iter().zip(corrections) {
        let phi = features(traj, scenario)?;
        let profile_sq: f64 = kernel.profile_at(c.timestep).iter().map(|w| w * w).sum();
        total += theta.dot(&phi)? - gamma * profile_sq * c.effort();
    }
    Ok(total)
}

/// Belief over the candidate reward set, stored as log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    log_weights: Vec<f64>,
}

/// Wire form of one belief entry. `log_weight` makes the form lossless;
/// readers that only know `probability` may omit it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeliefEntry {
    pub theta_index: usize,
    pub probability: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_weight: Option<f64>,
}

impl Belief {
    pub fn uniform(n: usize) -> Self {
        Self {
            log_weights: vec![-(n as f64).ln(); n],
        }
    }

    pub fn from_probabilities(p: &[f64]) -> Result<Self> {
        let z: f64 = p.iter().sum();
        if p.is_empty() || !(z > 0.0 && z.is_finite()) || p.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::DegenerateBelief);
        }
        Ok(Self {
            log_weights: p.iter().map(|v| (v / z).ln().max(LOG_FLOOR)).collect(),
        })
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    /// Most probable candidate; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, l) in self.log_weights.iter().enumerate() {
            if *l > self.log_weights[best] {
                best = i;
            }
        }
        best
    }

    pub fn to_wire(&self) -> Vec<BeliefEntry> {
        self.log_weights
            .iter()
            .enumerate()
            .map(|(theta_index, &l)| BeliefEntry {
                theta_index,
                probability: l.exp(),
                log_weight: Some(l),
            })
            .collect()
    }
}

impl Serialize for Belief {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_wire().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Belief {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let mut entries = Vec::<BeliefEntry>::deserialize(d)?;
        entries.sort_by_key(|e| e.theta_index);
        if entries.iter().enumerate().any(|(i, e)| e.theta_index != i) {
            return Err(serde::de::Error::custom("belief entries must cover theta indices 0..n once"));
        }
        if let Some(log_weights) = entries.iter().map(|e| e.log_weight).collect::<Option<Vec<f64>>>() {
            let b = Belief { log_weights };
            let z: f64 = b.probabilities().iter().sum();
            if b.is_empty() || b.log_weights.iter().any(|l| l.is_nan()) || (z - 1.0).abs() > 1e-9 {
                return Err(serde::de::Error::custom("log weights do not form a distribution"));
            }
            return Ok(b);
        }
        let p: Vec<f64> = entries.iter().map(|e| e.probability).collect();
        Belief::from_probabilities(&p).map_err(serde::de::Error::custom)
    }
}

fn normalize(raw: Vec<f64>) -> Result<Belief> {
    let max = raw
        .iter()
        .copied()
        .filter(|v| !v.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateBelief);
    }
    let sum: f64 = raw
        .iter()
        .map(|v| if v.is_nan() { 0.0 } else { (v - max).exp() })
        .sum();
    let log_z = max + sum.ln();
    let log_weights = raw
        .iter()
        .map(|v| if v.is_nan() { LOG_FLOOR } else { (v - log_z).max(LOG_FLOOR) })
        .collect();
    Ok(Belief { log_weights })
}

/// Bayes update in log space: `posterior ∝ prior * exp(log_likelihoods)`.
pub fn posterior_update(prior: &Belief, log_likelihoods: &[f64]) -> Result<Belief> {
    if prior.len() != log_likelihoods.len() {
        return Err(Error::Shape(format!(
            "{} log-likelihoods for {} candidates",
            log_likelihoods.len(),
            prior.len()
        )));
    }
    normalize(
        prior
            .log_weights
            .iter()
            .zip(log_likelihoods)
            .map(|(p, l)| p + l)
            .collect(),
    )
}
