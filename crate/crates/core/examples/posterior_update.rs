//! One correction, three ways of reading it: as a sequence, on its own,
//! or only through the final trajectory.
//!
//! cargo run --release --example posterior_update

use seqcorr::dstar::{solve_dstar, OptimizerConfig};
use seqcorr::evidence::{
    log_likelihood_final, log_likelihood_independent, log_likelihood_sequence, posterior_update, Belief,
    EvidenceConfig,
};
use seqcorr::rewards::Scenario;
use seqcorr::sim::Engine;
use seqcorr::trajectory::{deform, Correction};

fn main() -> seqcorr::Result<()> {
    let scenario = Scenario::load(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/single_agent.json"))?;
    let engine = Engine::with_defaults(scenario.clone(), None)?;
    let cfg = EvidenceConfig::from_scenario(&scenario);
    let beta = scenario.hyperparameters.beta_noise;
    let kernel = scenario.kernel()?;
    let plan = engine.initial_plan().clone();
    let prior = Belief::from_probabilities(&scenario.prior_probabilities())?;

    // Push the robot toward the left goal.
    let push = Correction::new(3, 0, [-0.8, 0.2]);
    let moved = deform(&plan, &push, &kernel)?;

    let opt = OptimizerConfig {
        t_max: 20,
        ..OptimizerConfig::for_scenario(&scenario)
    };
    let n = scenario.num_candidates();
    let (mut seq, mut ind, mut fin) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        let theta = scenario.theta(i);
        let dstar = solve_dstar(&plan, &theta, 1, &cfg, &opt, &scenario)?.dstar;
        seq[i] = beta * log_likelihood_sequence(&[push], &plan, &theta, dstar, &cfg, &scenario)?;
        ind[i] = beta * log_likelihood_independent(&moved, &plan, &theta, cfg.gamma, &scenario)?;
        fin[i] = beta * log_likelihood_final(&moved, &plan, &theta, cfg.gamma, &scenario)?;
    }
    println!("prior        {:.3?}", prior.probabilities());
    for (name, ll) in [("sequence", seq), ("independent", ind), ("final", fin)] {
        println!("{name:<12} {:.3?}", posterior_update(&prior, &ll)?.probabilities());
    }
    Ok(())
}
