//! Simulates SIS epidemics on ER graphs with recovery rates calibrated to
//! R0 = 1.5 and checks that every state stays a probability.
//!
//! cargo run --release --example sis_simulation

use netdyn::dynamics::{self, DynamicsConstants, DynamicsFamily, DynamicsParams, IcMode};
use netdyn::graph::TopologySpec;

fn main() -> netdyn::error::Result<()> {
    let constants = DynamicsConstants::default();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for seed in 0..20 {
        let topo = TopologySpec {
            n_nodes: 100,
            seed,
            ..Default::default()
        };
        let (g, spec, traj) = dynamics::simulate_instance(
            DynamicsFamily::Sis,
            &topo,
            &constants,
            IcMode::InDistribution,
            5.0,
            200,
            seed,
        )?;
        let DynamicsParams::Sis { delta } = &spec.params else { unreachable!() };
        let r0 = dynamics::sis_r0(&g, delta)?;
        let last = traj.state_at(traj.n_times() - 1);
        let prevalence = last.data().iter().sum::<f64>() / g.n_nodes() as f64;
        lo = traj.data().iter().copied().fold(lo, f64::min);
        hi = traj.data().iter().copied().fold(hi, f64::max);
        if seed < 5 {
            println!("seed {seed}: R0 = {r0:.9}, final prevalence {prevalence:.4}");
        }
        if seed == 0 {
            let path = std::env::temp_dir().join("netdyn_sis_trajectory.csv");
            traj.write_csv(&path)?;
            println!("wrote {}", path.display());
        }
    }
    println!("all states in [{lo:.6}, {hi:.6}]");
    assert!(lo >= 0.0 && hi <= 1.0);
    Ok(())
}
