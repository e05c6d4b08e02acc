//! Scenarios and the linear reward `R(xi; theta) = theta . Phi(xi)`.
//!
//! Every feature lies in `[0, 1]`: a raw non-negative cost `c` is mapped
//! to `exp(-c / scale)`, i.e. one minus its normalized value. Larger is
//! always better, and rewards are maximized everywhere.

mod features;
mod scenario;

pub use features::{features, reward_gradient, FeatureVector};
pub use scenario::{
    Bounds, Candidate, DangerZone, FeatureId, FeatureScales, GoalRegion, HumanProfile,
    Hyperparameters, Scenario, SCHEMA_VERSION,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

/// Reward weights, one per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RewardParams {
    pub theta: Vec<f64>,
}

impl RewardParams {
    pub fn new(theta: Vec<f64>) -> Self {
        Self { theta }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn dot(&self, phi: &FeatureVector) -> Result<f64> {
        if phi.values.len() != self.theta.len() {
            return Err(Error::Shape(format!(
                "{} weights for {} features",
                self.theta.len(),
                phi.values.len()
            )));
        }
        Ok(self.theta.iter().zip(&phi.values).map(|(w, f)| w * f).sum())
    }
}

/// `R(traj; theta)`.
pub fn reward(traj: &Trajectory, theta: &RewardParams, scenario: &Scenario) -> Result<f64> {
    theta.dot(&features(traj, scenario)?)
}
