use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{make_kernel, DeformationKernel, Point, SmoothnessOrder};

/// Current scenario file schema.
pub const SCHEMA_VERSION: u32 = 1;

/// Identifies one reward feature; serialized as `"goal:<label>"`,
/// `"formation"`, `"danger"` or `"efficiency"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FeatureId {
    /// Progress of the team centroid toward the named goal region.
    Goal(String),
    /// Preservation of the initial inter-agent distances.
    Formation,
    /// Staying out of danger zones.
    Danger,
    /// Short total path length.
    Efficiency,
}

impl TryFrom<String> for FeatureId {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        match s.as_str() {
            "formation" => Ok(Self::Formation),
            "danger" => Ok(Self::Danger),
            "efficiency" => Ok(Self::Efficiency),
            other => match other.strip_prefix("goal:") {
                Some(label) if !label.is_empty() => Ok(Self::Goal(label.to_string())),
                _ => Err(format!("unknown feature `{other}`")),
            },
        }
    }
}

impl From<FeatureId> for String {
    fn from(f: FeatureId) -> String {
        f.to_string()
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Goal(label) => write!(f, "goal:{label}"),
            Self::Formation => f.write_str("formation"),
            Self::Danger => f.write_str("danger"),
            Self::Efficiency => f.write_str("efficiency"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalRegion {
    pub label: String,
    pub center: Point,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DangerZone {
    pub center: Point,
    pub radius: f64,
}

/// Axis-aligned workspace box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Point,
    pub max: Point,
}

impl Bounds {
    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    pub fn clamp(&self, p: Point) -> Point {
        [p[0].clamp(self.min[0], self.max[0]), p[1].clamp(self.min[1], self.max[1])]
    }
}

/// Length scales turning raw feature quantities into `[0, 1]` values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScales {
    /// Meters of centroid-to-goal distance per e-fold of proximity.
    pub goal: f64,
    /// Meters of RMS inter-agent distance deviation per e-fold.
    pub formation: f64,
    /// Integrated squared penetration (m^2 s) per e-fold.
    pub danger: f64,
    /// Meters of summed path length per e-fold.
    pub efficiency: f64,
}

/// A candidate reward weight vector with a human-readable label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub label: String,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Deformation magnitude: peak displacement per unit force.
    pub mu: f64,
    /// Decay of earlier corrections' rewards.
    pub alpha: f64,
    /// Effort weight.
    pub gamma: f64,
    /// Intermediate-reward weight.
    pub lambda: f64,
    /// Rationality coefficient applied to every log-likelihood.
    pub beta_noise: f64,
    #[serde(default = "default_order")]
    pub kernel_order: SmoothnessOrder,
    /// Largest admissible correction force norm.
    pub force_bound: f64,
}

fn default_order() -> SmoothnessOrder {
    SmoothnessOrder::Acceleration
}

/// Behaviour of the simulated corrector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanProfile {
    /// Minimum evidence gain worth a correction.
    pub deadband: f64,
    /// Steps between two corrections.
    pub cooldown: usize,
    /// How far ahead of the current clock corrections are applied.
    pub lookahead: usize,
}

impl Default for HumanProfile {
    fn default() -> Self {
        Self {
            deadband: 0.05,
            cooldown: 3,
            lookahead: 2,
        }
    }
}

/// A navigation environment with its candidate reward set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub id: String,
    #[serde(default)]
    pub description: String,
    pub num_agents: usize,
    /// Number of steps `T`.
    pub horizon: usize,
    pub dt: f64,
    pub starts: Vec<Point>,
    pub bounds: Bounds,
    /// Largest per-step displacement of one agent in planned trajectories.
    pub max_step: f64,
    pub goal_regions: Vec<GoalRegion>,
    #[serde(default)]
    pub danger_zones: Vec<DangerZone>,
    pub feature_set: Vec<FeatureId>,
    pub scales: FeatureScales,
    pub candidate_thetas: Vec<Candidate>,
    /// Prior probabilities over candidates; uniform when absent.
    #[serde(default)]
    pub prior: Option<Vec<f64>>,
    #[serde(default)]
    pub true_theta_index: Option<usize>,
    pub hyperparameters: Hyperparameters,
    #[serde(default)]
    pub human: HumanProfile,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidScenario(msg.into())
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => invalid(format!("{}: {j}", path.display())),
            other => other,
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.num_agents == 0 || self.starts.len() != self.num_agents {
            return Err(invalid(format!(
                "{} agents declared but {} start positions",
                self.num_agents,
                self.starts.len()
            )));
        }
        if self.horizon < 2 {
            return Err(invalid("horizon must be at least 2 steps"));
        }
        if !(self.dt > 0.0 && self.max_step > 0.0) {
            return Err(invalid("dt and max_step must be positive"));
        }
        for p in &self.starts {
            if !self.bounds.contains(*p) {
                return Err(invalid(format!("start {p:?} lies outside the workspace")));
            }
        }
        if self.goal_regions.iter().any(|g| !(g.radius > 0.0)) {
            return Err(invalid("goal regions need positive radii"));
        }
        if self.danger_zones.iter().any(|z| !(z.radius > 0.0)) {
            return Err(invalid("danger zones need positive radii"));
        }
        let sc = &self.scales;
        if [sc.goal, sc.formation, sc.danger, sc.efficiency].iter().any(|v| !(*v > 0.0)) {
            return Err(invalid("feature scales must be positive"));
        }
        if self.feature_set.is_empty() {
            return Err(invalid("feature_set is empty"));
        }
        for f in &self.feature_set {
            if let FeatureId::Goal(label) = f {
                if self.goal_index(label).is_none() {
                    return Err(invalid(format!("feature {f} names no goal region")));
                }
            }
        }
        if self.candidate_thetas.is_empty() {
            return Err(invalid("candidate_thetas is empty"));
        }
        for c in &self.candidate_thetas {
            if c.weights.len() != self.feature_set.len() {
                return Err(invalid(format!(
                    "candidate `{}` has {} weights for {} features",
                    c.label,
                    c.weights.len(),
                    self.feature_set.len()
                )));
            }
            if c.weights.iter().any(|w| !w.is_finite()) {
                return Err(invalid(format!("candidate `{}` has non-finite weights", c.label)));
            }
        }
        if let Some(prior) = &self.prior {
            if prior.len() != self.candidate_thetas.len()
                || prior.iter().any(|p| !(*p >= 0.0 && p.is_finite()))
                || !(prior.iter().sum::<f64>() > 0.0)
            {
                return Err(invalid("prior must be non-negative with one entry per candidate"));
            }
        }
        if let Some(t) = self.true_theta_index {
            if t >= self.candidate_thetas.len() {
                return Err(invalid(format!("true_theta_index {t} out of range")));
            }
        }
        let h = &self.hyperparameters;
        if !(h.mu > 0.0) {
            return Err(Error::InvalidHyperparameter(format!("mu must be positive, got {}", h.mu)));
        }
        if !(h.alpha > 0.0 && h.alpha <= 1.0) {
            return Err(Error::InvalidHyperparameter(format!("alpha must lie in (0, 1], got {}", h.alpha)));
        }
        if !(h.gamma >= 0.0 && h.lambda >= 0.0 && h.beta_noise >= 0.0) {
            return Err(Error::InvalidHyperparameter("gamma, lambda and beta must be non-negative".into()));
        }
        if !(h.force_bound > 0.0) {
            return Err(Error::InvalidHyperparameter("force_bound must be positive".into()));
        }
        Ok(())
    }

    pub fn goal_index(&self, label: &str) -> Option<usize> {
        self.goal_regions.iter().position(|g| g.label == label)
    }

    pub fn num_features(&self) -> usize {
        self.feature_set.len()
    }

    pub fn num_candidates(&self) -> usize {
        self.candidate_thetas.len()
    }

    pub fn theta(&self, index: usize) -> super::RewardParams {
        super::RewardParams::new(self.candidate_thetas[index].weights.clone())
    }

    /// Normalized prior probabilities.
    pub fn prior_probabilities(&self) -> Vec<f64> {
        let n = self.candidate_thetas.len();
        match &self.prior {
            Some(p) => {
                let z: f64 = p.iter().sum();
                p.iter().map(|v| v / z).collect()
            }
            None => vec![1.0 / n as f64; n],
        }
    }

    /// Deformation kernel for this scenario's horizon.
    pub fn kernel(&self) -> Result<DeformationKernel> {
        make_kernel(
            self.horizon + 1,
            self.hyperparameters.mu,
            self.hyperparameters.kernel_order,
        )
    }
}
