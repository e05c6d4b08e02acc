//! Saves an episode log, replays it, then tampers with it and replays
//! again to show where the divergence is reported.
//!
//! cargo run --release --example replay_log

use std::sync::Arc;

use seqcorr::rewards::Scenario;
use seqcorr::sim::{replay_jsonl, run_episode, Engine, EpisodeLog, InferenceModel};

fn main() -> seqcorr::Result<()> {
    let scenario = Scenario::load(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/single_agent.json"))?;
    let engine = Arc::new(Engine::with_defaults(scenario, None)?);
    let log = run_episode(engine, InferenceModel::Independent, 4, 0.1)?;

    let path = std::env::temp_dir().join("seqcorr-example-episode.jsonl");
    log.save(&path)?;
    let text = EpisodeLog::load(&path)?.to_jsonl();
    println!("{} records, replay passed: {}", log.records().len(), replay_jsonl(&text, None)?.passed());

    // Move one executed waypoint by a millimetre.
    let mut lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let tick = lines.iter().position(|l| l["kind"] == "tick").unwrap();
    let x = lines[tick]["positions"][0][0].as_f64().unwrap();
    lines[tick]["positions"][0][0] = serde_json::json!(x + 1e-3);
    let tampered: String = lines.iter().map(|l| format!("{l}\n")).collect();
    if let Some(d) = replay_jsonl(&tampered, None)?.divergence {
        println!("tampered: line {} ({}) differs at {}: expected {}, found {}", d.line, d.kind, d.path, d.expected, d.actual);
    }
    Ok(())
}
