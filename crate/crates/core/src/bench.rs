//! Headless accuracy benchmarks against the simulated corrector.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::sim::{run_episode, Engine, EpisodeLog, InferenceModel, LogRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub models: Vec<InferenceModel>,
    /// Episodes per model and noise level.
    pub episodes: usize,
    pub sigmas: Vec<f64>,
    pub seed: u64,
}

/// Accuracy of one model at one noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: InferenceModel,
    pub sigma: f64,
    pub episodes: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Sample standard deviation of the per-episode 0/1 outcome.
    pub accuracy_std: f64,
    pub mean_corrections: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub scenario_id: String,
    pub true_theta_index: Option<usize>,
    pub config: BenchmarkConfig,
    pub results: Vec<ModelSummary>,
}

impl BenchmarkSummary {
    pub fn get(&self, model: InferenceModel, sigma: f64) -> Option<&ModelSummary> {
        self.results.iter().find(|r| r.model == model && r.sigma == sigma)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub model: InferenceModel,
    pub sigma_index: usize,
    pub sigma: f64,
    pub episode: usize,
    pub seed: u64,
    pub log: EpisodeLog,
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub summary: BenchmarkSummary,
    pub episodes: Vec<EpisodeResult>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one episode. It does not depend on the model, so every model
/// faces the same corrector noise.
pub fn episode_seed(seed: u64, sigma_index: usize, episode: usize) -> u64 {
    splitmix(seed ^ splitmix(((sigma_index as u64) << 40) ^ episode as u64))
}

/// Runs every (model, sigma, episode) combination on the rayon pool and
/// aggregates in that order.
pub fn run_benchmark(engine: Arc<Engine>, cfg: &BenchmarkConfig) -> Result<BenchmarkOutcome> {
    for m in &cfg.models {
        engine.check_model(*m)?;
    }
    let jobs: Vec<(InferenceModel, usize, f64, usize)> = cfg
        .models
        .iter()
        .flat_map(|&m| {
            cfg.sigmas
                .iter()
                .enumerate()
                .flat_map(move |(si, &s)| (0..cfg.episodes).map(move |e| (m, si, s, e)))
        })
        .collect();
    let episodes = jobs
        .par_iter()
        .map(|&(model, sigma_index, sigma, episode)| {
            let seed = episode_seed(cfg.seed, sigma_index, episode);
            let log = run_episode(Arc::clone(&engine), model, seed, sigma)?;
            Ok(EpisodeResult {
                model,
                sigma_index,
                sigma,
                episode,
                seed,
                log,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut results = Vec::new();
    if cfg.episodes > 0 {
        for &model in &cfg.models {
            for &sigma in &cfg.sigmas {
                let group: Vec<&EpisodeResult> = episodes
                    .iter()
                    .filter(|e| e.model == model && e.sigma == sigma)
                    .collect();
                let n = group.len();
                let correct = group.iter().filter(|e| e.log.correct() == Some(true)).count();
                let accuracy = correct as f64 / n as f64;
                let accuracy_std = if n > 1 {
                    let ss: f64 = group
                        .iter()
                        .map(|e| {
                            let x = if e.log.correct() == Some(true) { 1.0 } else { 0.0 };
                            (x - accuracy) * (x - accuracy)
                        })
                        .sum();
                    (ss / (n - 1) as f64).sqrt()
                } else {
                    0.0
                };
                let mean_corrections =
                    group.iter().map(|e| e.log.num_corrections()).sum::<usize>() as f64 / n as f64;
                results.push(ModelSummary {
                    model,
                    sigma,
                    episodes: n,
                    correct,
                    accuracy,
                    accuracy_std,
                    mean_corrections,
                });
            }
        }
    }
    Ok(BenchmarkOutcome {
        summary: BenchmarkSummary {
            scenario_id: engine.scenario().id.clone(),
            true_theta_index: engine.scenario().true_theta_index,
            config: cfg.clone(),
            results,
        },
        episodes,
    })
}

/// Belief traces, one row per (episode, event, candidate). Events are the
/// prior (`event` 0), every correction, and the final belief.
pub fn belief_csv(episodes: &[EpisodeResult]) -> String {
    let mut out = String::from("model,sigma,episode,seed,event,kind,clock,corrections,theta_index,probability\n");
    for e in episodes {
        let mut event = 0;
        let mut k = 0;
        for r in e.log.records() {
            let kind = match r {
                LogRecord::Header { .. } => "prior",
                LogRecord::Correction { .. } => {
                    k += 1;
                    "correction"
                }
                LogRecord::Final { .. } => "final",
                LogRecord::Tick { .. } => continue,
            };
            for (i, p) in r.belief().probabilities().iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{}",
                    e.model,
                    e.sigma,
                    e.episode,
                    e.seed,
                    event,
                    kind,
                    r.clock(),
                    k,
                    i,
                    p
                )
                .expect("writing to a string");
            }
            event += 1;
        }
    }
    out
}

/// Relative path of an episode's log inside a benchmark output directory.
pub fn log_file_name(e: &EpisodeResult) -> String {
    format!("logs/{}_sigma{}_ep{:04}.jsonl", e.model, e.sigma_index, e.episode)
}

/// Writes `summary.json`, `beliefs.csv`, and `logs/*.jsonl` under `dir`.
pub fn write_outputs(dir: &Path, outcome: &BenchmarkOutcome) -> Result<()> {
    std::fs::create_dir_all(dir.join("logs"))?;
    std::fs::write(dir.join("summary.json"), outcome.summary.to_json())?;
    std::fs::write(dir.join("beliefs.csv"), belief_csv(&outcome.episodes))?;
    for e in &outcome.episodes {
        e.log.save(dir.join(log_file_name(e)))?;
    }
    Ok(())
}
