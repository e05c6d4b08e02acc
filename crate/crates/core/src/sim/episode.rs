//! Episode state machine: corrections, belief updates, and replanning.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::human::{simulated_human, HumanConfig, HumanView};
use super::log::{EpisodeLog, LogRecord, LOG_SCHEMA_VERSION};
use super::planner::{plan, PlanOutcome, PlannerConfig};
use crate::dstar::{library_key, DStarLibrary};
use crate::error::{Error, Result};
use crate::evidence::{
    accumulated_evidence, log_likelihood_final, log_likelihood_independent, posterior_update, Belief,
    EvidenceConfig,
};
use crate::rewards::{RewardParams, Scenario};
use crate::trajectory::{deform, Correction, DeformationKernel, Point, Trajectory};

/// Which likelihood drives the belief.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceModel {
    /// Whole correction sequence, normalized by `D*`.
    Sequence,
    /// Each correction on its own, accumulated online.
    Independent,
    /// Only the last corrected trajectory, once the episode ends.
    Final,
}

impl InferenceModel {
    pub const ALL: [InferenceModel; 3] = [Self::Sequence, Self::Independent, Self::Final];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sequence => "sequence",
            Self::Independent => "independent",
            Self::Final => "final",
        }
    }
}

impl fmt::Display for InferenceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InferenceModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sequence" => Ok(Self::Sequence),
            "independent" => Ok(Self::Independent),
            "final" => Ok(Self::Final),
            other => Err(format!("unknown model `{other}`")),
        }
    }
}

/// Which weights the robot plans with.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanningMode {
    /// The most probable candidate.
    #[default]
    Argmax,
    /// The belief-weighted mean of the candidates.
    Expected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub planner: PlannerConfig,
    #[serde(default)]
    pub planning: PlanningMode,
    pub evidence: EvidenceConfig,
}

impl EngineConfig {
    pub fn for_scenario(scenario: &Scenario) -> Self {
        Self {
            planner: PlannerConfig::default(),
            planning: PlanningMode::Argmax,
            evidence: EvidenceConfig::from_scenario(scenario),
        }
    }
}

/// Immutable per-scenario context shared by all episodes.
#[derive(Debug, Clone)]
pub struct Engine {
    scenario: Scenario,
    config: EngineConfig,
    library: Option<DStarLibrary>,
    kernel: DeformationKernel,
    prior: Belief,
    initial_plan: Trajectory,
}

impl Engine {
    /// Validates the inputs and plans the initial trajectory under the
    /// prior.
    pub fn new(scenario: Scenario, config: EngineConfig, library: Option<DStarLibrary>) -> Result<Self> {
        scenario.validate()?;
        config.evidence.validate()?;
        let kernel = scenario.kernel()?;
        let prior = Belief::from_probabilities(&scenario.prior_probabilities())?;
        let mut engine = Self {
            initial_plan: Trajectory::new(vec![scenario.starts.clone(); scenario.horizon + 1], scenario.dt)?,
            scenario,
            config,
            library,
            kernel,
            prior,
        };
        engine.initial_plan = engine.replan(&engine.prior.clone(), &[engine.scenario.starts.clone()])?.trajectory;
        Ok(engine)
    }

    pub fn with_defaults(scenario: Scenario, library: Option<DStarLibrary>) -> Result<Self> {
        let config = EngineConfig::for_scenario(&scenario);
        Self::new(scenario, config, library)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn library(&self) -> Option<&DStarLibrary> {
        self.library.as_ref()
    }

    pub fn kernel(&self) -> &DeformationKernel {
        &self.kernel
    }

    pub fn prior(&self) -> &Belief {
        &self.prior
    }

    /// The robot's plan before any correction.
    pub fn initial_plan(&self) -> &Trajectory {
        &self.initial_plan
    }

    /// Largest `K` the library covers for every candidate.
    pub fn library_k_max(&self) -> usize {
        self.library
            .as_ref()
            .map_or(0, |l| l.k_max(&self.scenario.id, self.scenario.num_candidates()))
    }

    /// Fails unless the model's inputs are available.
    pub fn check_model(&self, model: InferenceModel) -> Result<()> {
        if model == InferenceModel::Sequence && self.library_k_max() == 0 {
            return Err(Error::LibraryMiss(format!(
                "{}: the sequence model needs a D* library; run `seqcorr precompute --scenario <file>` first",
                self.scenario.id
            )));
        }
        Ok(())
    }

    /// `D*` for `theta_index` at the largest stored `K' <= k`.
    pub fn dstar(&self, theta_index: usize, k: usize) -> Result<(usize, f64)> {
        let key = library_key(&self.scenario.id, theta_index, k);
        let lib = self.library.as_ref().ok_or_else(|| Error::LibraryMiss(key.clone()))?;
        match lib.get_at_most(&self.scenario.id, theta_index, k) {
            Some((kk, e)) => {
                if kk < k {
                    log::warn!("no D* entry for {key}; using K = {kk}");
                }
                Ok((kk, e.dstar))
            }
            None => Err(Error::LibraryMiss(key)),
        }
    }

    /// Every `D*` value for this scenario, keyed like the library.
    pub fn dstar_table(&self) -> BTreeMap<String, f64> {
        let prefix = format!("{}/", self.scenario.id);
        self.library
            .iter()
            .flat_map(|l| l.entries())
            .filter(|(k, _)| k.starts_with(&prefix))
            .map(|(k, e)| (k.clone(), e.dstar))
            .collect()
    }

    pub fn planning_theta(&self, belief: &Belief) -> RewardParams {
        match self.config.planning {
            PlanningMode::Argmax => self.scenario.theta(belief.argmax()),
            PlanningMode::Expected => {
                let mut theta = vec![0.0; self.scenario.num_features()];
                for (p, c) in belief.probabilities().iter().zip(&self.scenario.candidate_thetas) {
                    for (t, w) in theta.iter_mut().zip(&c.weights) {
                        *t += p * w;
                    }
                }
                RewardParams::new(theta)
            }
        }
    }

    pub fn replan(&self, belief: &Belief, history: &[Vec<Point>]) -> Result<PlanOutcome> {
        plan(&self.planning_theta(belief), &self.scenario, history, &self.config.planner)
    }
}

/// Mutable state of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    pub model: InferenceModel,
    pub clock: usize,
    pub plan: Trajectory,
    pub belief: Belief,
    pub corrections: Vec<Correction>,
    /// `deformed_history[i]` has the first `i + 1` corrections applied to
    /// the initial plan.
    pub deformed_history: Vec<Trajectory>,
    /// Executed joint states `0..=clock`.
    pub executed: Vec<Vec<Point>>,
    pub last_correction_clock: Option<usize>,
    pub rng_seed: u64,
    pub finished: bool,
}

impl EpisodeState {
    pub fn positions(&self) -> &[Point] {
        self.executed.last().expect("start state")
    }
}

/// Result of applying one correction.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionOutcome {
    pub applied: Correction,
    pub clamped: bool,
    /// The current plan deformed by the correction, before replanning.
    pub deformed_plan: Trajectory,
    /// `K` of the `D*` entry used, for the sequence model.
    pub k_used: Option<usize>,
}

/// An episode bound to its engine, recording a log as it goes.
#[derive(Debug, Clone)]
pub struct Episode {
    engine: Arc<Engine>,
    state: EpisodeState,
    records: Vec<LogRecord>,
}

impl Episode {
    pub fn new(engine: Arc<Engine>, model: InferenceModel, seed: u64, sigma: Option<f64>) -> Result<Self> {
        engine.check_model(model)?;
        let state = EpisodeState {
            model,
            clock: 0,
            plan: engine.initial_plan.clone(),
            belief: engine.prior.clone(),
            corrections: Vec::new(),
            deformed_history: Vec::new(),
            executed: vec![engine.scenario.starts.clone()],
            last_correction_clock: None,
            rng_seed: seed,
            finished: false,
        };
        let header = LogRecord::Header {
            schema_version: LOG_SCHEMA_VERSION,
            scenario: Box::new(engine.scenario.clone()),
            model,
            seed,
            sigma,
            engine: engine.config,
            dstar: if model == InferenceModel::Sequence {
                engine.dstar_table()
            } else {
                BTreeMap::new()
            },
            prior: engine.prior.clone(),
            initial_plan: engine.initial_plan.clone(),
        };
        Ok(Self {
            engine,
            state,
            records: vec![header],
        })
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn state(&self) -> &EpisodeState {
        &self.state
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    fn current_deformed(&self) -> &Trajectory {
        self.state.deformed_history.last().unwrap_or(&self.engine.initial_plan)
    }

    /// Applies a correction at the current clock.
    ///
    /// Timesteps not after the clock are re-stamped to `clock + 1`, and
    /// forces beyond the bound are scaled onto it.
    pub fn apply_correction(&mut self, requested: Correction) -> Result<CorrectionOutcome> {
        let scenario = &self.engine.scenario;
        // No interior waypoint is left to correct once the clock reaches T-1.
        if self.state.finished || self.state.clock + 1 >= scenario.horizon {
            return Err(Error::EpisodeEnded);
        }
        if requested.agent >= scenario.num_agents {
            return Err(Error::InvalidCorrection(format!(
                "agent {} of {}",
                requested.agent, scenario.num_agents
            )));
        }
        if !(requested.force[0].is_finite() && requested.force[1].is_finite()) {
            return Err(Error::InvalidCorrection("force must be finite".into()));
        }
        let timestep = requested.timestep.max(self.state.clock + 1);
        if timestep >= scenario.horizon {
            return Err(Error::InvalidCorrection(format!(
                "timestep {} outside the active horizon (clock {}, horizon {})",
                requested.timestep, self.state.clock, scenario.horizon
            )));
        }
        let bound = scenario.hyperparameters.force_bound;
        let f = requested.force;
        let norm = (f[0] * f[0] + f[1] * f[1]).sqrt();
        let clamped = norm > bound;
        let force = if clamped { [f[0] * bound / norm, f[1] * bound / norm] } else { f };
        let applied = Correction::new(timestep, requested.agent, force);

        let next = deform(self.current_deformed(), &applied, &self.engine.kernel)?;
        self.state.corrections.push(applied);
        self.state.deformed_history.push(next);
        let k_used = self.update_belief()?;

        let deformed_plan = deform(&self.state.plan, &applied, &self.engine.kernel)?;
        self.state.plan = self.engine.replan(&self.state.belief, &self.state.executed)?.trajectory;
        self.state.last_correction_clock = Some(self.state.clock);

        self.records.push(LogRecord::Correction {
            clock: self.state.clock,
            requested,
            applied,
            clamped,
            k_used,
            belief: self.state.belief.clone(),
            deformed: self.state.deformed_history.last().expect("just pushed").clone(),
            plan: self.state.plan.clone(),
        });
        Ok(CorrectionOutcome {
            applied,
            clamped,
            deformed_plan,
            k_used,
        })
    }

    fn update_belief(&mut self) -> Result<Option<usize>> {
        let engine = &self.engine;
        let scenario = &engine.scenario;
        let beta = scenario.hyperparameters.beta_noise;
        let n = scenario.num_candidates();
        match self.state.model {
            InferenceModel::Sequence => {
                let k = self.state.corrections.len();
                let mut lls = Vec::with_capacity(n);
                let mut k_used = k;
                for i in 0..n {
                    let theta = scenario.theta(i);
                    let (kk, dstar) = engine.dstar(i, k)?;
                    k_used = k_used.min(kk);
                    let d = accumulated_evidence(
                        &self.state.deformed_history,
                        &self.state.corrections,
                        &theta,
                        &engine.config.evidence,
                        scenario,
                    )?;
                    lls.push(beta * (d - dstar));
                }
                self.state.belief = posterior_update(&engine.prior, &lls)?;
                Ok(Some(k_used))
            }
            InferenceModel::Independent => {
                let h = &self.state.deformed_history;
                let last = &h[h.len() - 1];
                let prev = if h.len() >= 2 { &h[h.len() - 2] } else { &engine.initial_plan };
                let gamma = engine.config.evidence.gamma;
                let lls = (0..n)
                    .map(|i| Ok(beta * log_likelihood_independent(last, prev, &scenario.theta(i), gamma, scenario)?))
                    .collect::<Result<Vec<_>>>()?;
                self.state.belief = posterior_update(&self.state.belief, &lls)?;
                Ok(None)
            }
            InferenceModel::Final => Ok(None),
        }
    }

    /// Moves one step along the current plan.
    pub fn advance(&mut self) -> Result<()> {
        if self.state.finished || self.state.clock >= self.engine.scenario.horizon {
            return Err(Error::EpisodeEnded);
        }
        self.state.clock += 1;
        let next = self.state.plan.state(self.state.clock);
        self.state.executed.push(next.clone());
        self.records.push(LogRecord::Tick {
            clock: self.state.clock,
            positions: next,
            belief: self.state.belief.clone(),
        });
        Ok(())
    }

    /// Applies an optional correction, then advances the clock.
    pub fn step(&mut self, correction: Option<Correction>) -> Result<Option<CorrectionOutcome>> {
        let outcome = correction.map(|c| self.apply_correction(c)).transpose()?;
        self.advance()?;
        Ok(outcome)
    }

    pub fn is_done(&self) -> bool {
        self.state.finished || self.state.clock >= self.engine.scenario.horizon
    }

    /// Ends the episode. The final model computes its posterior here,
    /// comparing the last corrected trajectory (or the initial plan if
    /// there were no corrections) with the initial plan.
    pub fn finalize(mut self) -> Result<EpisodeLog> {
        self.finish()
    }

    /// Like [`Episode::finalize`] but keeps the episode, which rejects
    /// further mutation afterwards.
    pub fn finish(&mut self) -> Result<EpisodeLog> {
        if self.state.finished {
            return Err(Error::EpisodeEnded);
        }
        let engine = Arc::clone(&self.engine);
        let scenario = &engine.scenario;
        if self.state.model == InferenceModel::Final {
            let beta = scenario.hyperparameters.beta_noise;
            let last = self.current_deformed();
            let lls = (0..scenario.num_candidates())
                .map(|i| {
                    Ok(beta
                        * log_likelihood_final(
                            last,
                            &engine.initial_plan,
                            &scenario.theta(i),
                            engine.config.evidence.gamma,
                            scenario,
                        )?)
                })
                .collect::<Result<Vec<_>>>()?;
            self.state.belief = posterior_update(&engine.prior, &lls)?;
        }
        self.state.finished = true;
        self.records.push(LogRecord::Final {
            clock: self.state.clock,
            belief: self.state.belief.clone(),
            corrections: self.state.corrections.len(),
            true_theta_index: scenario.true_theta_index,
            predicted_theta_index: self.state.belief.argmax(),
        });
        EpisodeLog::from_records(self.records.clone())
    }
}

/// Runs a full episode against a simulated human holding the scenario's
/// true candidate.
pub fn run_episode(engine: Arc<Engine>, model: InferenceModel, seed: u64, sigma: f64) -> Result<EpisodeLog> {
    let scenario = engine.scenario();
    let truth = scenario
        .true_theta_index
        .ok_or_else(|| Error::InvalidScenario("no true theta to simulate".into()))?;
    if truth >= scenario.num_candidates() {
        return Err(Error::InvalidScenario(format!("true theta index {truth} out of range")));
    }
    let theta = scenario.theta(truth);
    let human = HumanConfig::new(&scenario.human, sigma);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut episode = Episode::new(Arc::clone(&engine), model, seed, Some(sigma))?;
    while !episode.is_done() {
        let view = HumanView {
            clock: episode.state.clock,
            current: episode.current_deformed(),
            last_correction_clock: episode.state.last_correction_clock,
        };
        let c = simulated_human(
            &theta,
            view,
            &human,
            &engine.config.evidence,
            &engine.kernel,
            engine.scenario(),
            &mut rng,
        )?;
        episode.step(c)?;
    }
    episode.finalize()
}
