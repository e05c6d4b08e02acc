//! Feature values and candidate rewards of the straight-line plans in a
//! bundled scenario.
//!
//! cargo run --example features_and_reward

use seqcorr::rewards::{features, reward, Scenario};
use seqcorr::trajectory::Trajectory;

fn main() -> seqcorr::Result<()> {
    let scenario = Scenario::load(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/single_agent.json"))?;
    let names: Vec<String> = scenario.feature_set.iter().map(|f| f.to_string()).collect();
    println!("features: {names:?}");

    for goal in &scenario.goal_regions {
        let line = Trajectory::straight_line(&scenario.starts, &[goal.center], scenario.horizon, scenario.dt)?;
        let phi = features(&line, &scenario)?;
        println!("\nstraight to {}: phi = {:.3?}", goal.label, phi.values);
        for i in 0..scenario.num_candidates() {
            let theta = scenario.theta(i);
            println!("  theta[{i}] {:?}  R = {:.3}", theta.theta, reward(&line, &theta, &scenario)?);
        }
    }
    Ok(())
}
