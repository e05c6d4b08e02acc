//! Push one agent mid-trajectory and watch the deformation spread.
//!
//! cargo run --example deform_trajectory

use seqcorr::trajectory::{deform, make_kernel, propagate_sequence, Correction, SmoothnessOrder, Trajectory};

fn main() -> seqcorr::Result<()> {
    let horizon = 10;
    let plan = Trajectory::straight_line(&[[0.0, 0.0]], &[[0.0, 5.0]], horizon, 0.1)?;
    let kernel = make_kernel(plan.len(), 1.0, SmoothnessOrder::Acceleration)?;
    println!("kernel profile: {:.3?}", kernel.base_profile());

    let push = Correction::new(4, 0, [0.5, 0.0]);
    let pushed = deform(&plan, &push, &kernel)?;
    for i in 0..=horizon {
        let (a, b) = (plan.point(i, 0), pushed.point(i, 0));
        println!("t={i:2}  x {:+.3} -> {:+.3}", a[0], b[0]);
    }

    // A second push later in time builds on the first.
    let seq = [push, Correction::new(7, 0, [-0.3, 0.0])];
    let chain = propagate_sequence(&plan, &seq, &kernel)?;
    println!("after two pushes, x at t=7: {:+.3}", chain[1].point(7, 0)[0]);
    Ok(())
}
