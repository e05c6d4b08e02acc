//! Builds a small normalizer library, saves it, and resumes from it.
//!
//! cargo run --release --example precompute_dstar

use seqcorr::dstar::{build_library, DStarLibrary, OptimizerConfig};
use seqcorr::evidence::EvidenceConfig;
use seqcorr::rewards::Scenario;
use seqcorr::sim::Engine;

fn main() -> seqcorr::Result<()> {
    let scenario = Scenario::load(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/two_agent.json"))?;
    let cfg = EvidenceConfig::from_scenario(&scenario);
    let plan = Engine::with_defaults(scenario.clone(), None)?.initial_plan().clone();
    let opt = OptimizerConfig {
        t_max: 16,
        inner_iterations: 100,
        seed: 7,
        ..OptimizerConfig::for_scenario(&scenario)
    };

    let library = build_library(&scenario, &plan, 2, &cfg, &opt, None)?;
    for (key, e) in library.entries() {
        println!("{key:<16} D* = {:8.4}  times {:?} agents {:?}", e.dstar, e.times, e.agents);
    }

    let dir = std::env::temp_dir().join("seqcorr-example");
    std::fs::create_dir_all(&dir).expect("temp dir is writable");
    let path = dir.join("two_agent.dstar.json");
    library.save(&path)?;

    // Extending to K = 3 only solves the new entries.
    let grown = build_library(&scenario, &plan, 3, &cfg, &opt, Some(DStarLibrary::load(&path)?))?;
    println!("{} entries -> {} entries, saved to {}", library.len(), grown.len(), path.display());
    Ok(())
}
