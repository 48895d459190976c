//! Generates a small mixed-topology dataset on disk and reads it back.
//!
//! cargo run --release --example generate_dataset [out_dir]

use netdyn::dataset::{self, Dataset, DatasetSpec, Split};
use netdyn::dynamics::DynamicsFamily;
use netdyn::graph::TopologySpec;

fn main() -> netdyn::error::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("netdyn_dataset"));
    let spec = DatasetSpec {
        dynamics: DynamicsFamily::Neural,
        topology: TopologySpec {
            n_nodes: 30,
            p: 0.2,
            m: 3,
            ..Default::default()
        },
        mixed: true,
        n_train: 4,
        n_val: 1,
        n_test: 1,
        ..Default::default()
    };
    let ds = dataset::generate(&spec, 2024, false)?;
    ds.write(&out)?;
    let back = Dataset::read(&out)?;
    assert_eq!(back, ds);
    let m = &back.manifest;
    println!(
        "{} {} dataset: N = {}, T = {}, t_final = {}, splits {}/{}/{}",
        m.dynamics.label(),
        m.topology,
        m.n_nodes,
        m.n_timestamps,
        m.t_final,
        m.splits.train.len(),
        m.splits.val.len(),
        m.splits.test.len()
    );
    println!("first test instance: {}", back.ids(Split::Test)[0]);
    println!("written to {}", out.display());
    Ok(())
}
