//! Exports a simulated system as a node/timestamp panel CSV, ingests it
//! back, and runs the chronological-split protocol for 7/14/21-step horizons.
//! Test windows start at or after the split (80% of the series), so the
//! series must be long enough to hold a 42-step window after it.
//!
//! cargo run --release --example transductive_csv

use netdyn::dataset;
use netdyn::dynamics::{self, DynamicsConstants, DynamicsFamily, IcMode};
use netdyn::experiment::{self, Command, ExperimentConfig, RunOptions};
use netdyn::graph::TopologySpec;
use serde_json::json;

fn main() -> netdyn::error::Result<()> {
    let dir = std::env::temp_dir().join("netdyn_transductive");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir)?;
    let topo = TopologySpec {
        n_nodes: 20,
        p: 0.2,
        seed: 3,
        ..Default::default()
    };
    let (_, _, traj) = dynamics::simulate_instance(
        DynamicsFamily::Population,
        &topo,
        &DynamicsConstants::default(),
        IcMode::InDistribution,
        7.5,
        300,
        3,
    )?;
    let panel = dir.join("panel.csv");
    dataset::write_panel_csv(&panel, &traj, None)?;
    let (back, ids) = dataset::read_panel_csv(&panel)?;
    assert_eq!(back, traj);
    println!("{} nodes x {} timestamps round-tripped through {}", ids.len(), back.n_times(), panel.display());

    let cfg = ExperimentConfig::resolve(&json!({
        "transductive": { "csv": panel },
        "model": { "latent_dim": 8 },
        "train": { "epochs": 3 }
    }))?;
    let opts = RunOptions {
        out: Some(dir.join("run")),
        ..Default::default()
    };
    let report = experiment::run(Command::Transductive, cfg, &opts)?;
    for h in report["horizons"].as_array().expect("horizons") {
        println!(
            "horizon {:>2}: {} train / {} test windows, MAE {:.4}",
            h["horizon"], h["n_train_windows"], h["n_test_windows"], h["aggregate"]["mae_mean"].as_f64().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
