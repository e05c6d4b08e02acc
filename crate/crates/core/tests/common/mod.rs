#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use seqcorr::dstar::{build_library, DStarLibrary, OptimizerConfig};
use seqcorr::rewards::Scenario;
use seqcorr::sim::Engine;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.json"))
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::load(scenario_path(name)).expect("shipped scenario loads")
}

/// One agent, six steps: small enough for exhaustive search.
pub fn micro_scenario() -> Scenario {
    let mut s = scenario("single_agent");
    s.id = "micro".into();
    s.horizon = 6;
    s.max_step = 0.9;
    s
}

pub fn library(scenario: &Scenario, k_max: usize, t_max: usize) -> DStarLibrary {
    let engine = Engine::with_defaults(scenario.clone(), None).unwrap();
    let opt = OptimizerConfig {
        t_max,
        ..OptimizerConfig::for_scenario(scenario)
    };
    build_library(scenario, engine.initial_plan(), k_max, &engine.config().evidence, &opt, None).unwrap()
}

pub fn engine_with_library(scenario: &Scenario, k_max: usize, t_max: usize) -> Arc<Engine> {
    let lib = library(scenario, k_max, t_max);
    Arc::new(Engine::with_defaults(scenario.clone(), Some(lib)).unwrap())
}
