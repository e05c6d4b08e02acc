//! A full simulated episode with the sequence model, printed as it is
//! logged.
//!
//! cargo run --release --example run_episode

use std::sync::Arc;

use seqcorr::dstar::DStarLibrary;
use seqcorr::rewards::Scenario;
use seqcorr::sim::{run_episode, Engine, InferenceModel, LogRecord};

fn main() -> seqcorr::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios");
    let scenario = Scenario::load(format!("{dir}/two_agent.json"))?;
    let library = DStarLibrary::load(format!("{dir}/two_agent.dstar.json"))?;
    let engine = Arc::new(Engine::with_defaults(scenario, Some(library))?);

    let log = run_episode(engine, InferenceModel::Sequence, 1, 0.1)?;
    for r in log.records() {
        match r {
            LogRecord::Correction { applied, belief, k_used, .. } => println!(
                "clock {:2}  push agent {} at t={} force {:+.2?}  K={k_used:?}  belief {:.3?}",
                r.clock(),
                applied.agent,
                applied.timestep,
                applied.force,
                belief.probabilities()
            ),
            LogRecord::Tick { positions, .. } => println!("clock {:2}  at {:.2?}", r.clock(), positions),
            _ => println!("{}", r.kind()),
        }
    }
    println!(
        "predicted theta {} (true {:?}) after {} corrections",
        log.predicted_theta_index(),
        log.true_theta_index(),
        log.num_corrections()
    );
    Ok(())
}
