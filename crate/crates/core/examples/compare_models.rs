//! Accuracy of the three inference models across corrector noise levels.
//!
//! cargo run --release --example compare_models [scenario] [episodes]

use std::sync::Arc;

use seqcorr::bench::{run_benchmark, BenchmarkConfig};
use seqcorr::dstar::DStarLibrary;
use seqcorr::rewards::Scenario;
use seqcorr::sim::{Engine, InferenceModel};

fn main() -> seqcorr::Result<()> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "two_agent".into());
    let episodes = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);

    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios");
    let scenario = Scenario::load(format!("{dir}/{name}.json"))?;
    let library = DStarLibrary::load(format!("{dir}/{name}.dstar.json"))?;
    let engine = Arc::new(Engine::with_defaults(scenario, Some(library))?);

    let cfg = BenchmarkConfig {
        models: InferenceModel::ALL.to_vec(),
        episodes,
        sigmas: vec![0.0, 0.1, 0.3],
        seed: 1,
    };
    let out = run_benchmark(engine, &cfg)?;
    println!("{:<12} {:>6} {:>9} {:>12}", "model", "sigma", "accuracy", "corrections");
    for r in &out.summary.results {
        println!(
            "{:<12} {:>6.2} {:>9.2} {:>12.2}",
            r.model.as_str(),
            r.sigma,
            r.accuracy,
            r.mean_corrections
        );
    }
    Ok(())
}
