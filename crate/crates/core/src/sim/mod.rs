//! Closed-loop simulation: planning, the simulated corrector, episodes,
//! logs, and replay.

pub mod episode;
pub mod human;
pub mod log;
pub mod planner;

pub use episode::{
    run_episode, CorrectionOutcome, Engine, EngineConfig, Episode, EpisodeState, InferenceModel, PlanningMode,
};
pub use human::{best_force, simulated_human, HumanConfig, HumanView, ProposedForce};
pub use log::{replay, replay_jsonl, validate_records, Divergence, EpisodeLog, LogRecord, ReplayReport};
pub use planner::{initial_plan, plan, PlanOutcome, PlannerConfig};
