//! Trains briefly on Mutualistic dynamics and writes truth and prediction
//! state grids (nodes sorted by final true state) for a 100-node graph.
//!
//! cargo run --release --example state_grid

use netdyn::dataset::{self, DatasetSpec, Split};
use netdyn::dynamics::DynamicsFamily;
use netdyn::graph::TopologySpec;
use netdyn::metrics;
use netdyn::model::ModelConfig;
use netdyn::train::{self, TrainConfig};

fn main() -> netdyn::error::Result<()> {
    let spec = DatasetSpec {
        dynamics: DynamicsFamily::Mutualistic,
        topology: TopologySpec {
            n_nodes: 100,
            ..Default::default()
        },
        n_train: 4,
        n_val: 0,
        n_test: 1,
        ..Default::default()
    };
    let ds = dataset::generate(&spec, 1, false)?;
    let cfg = ModelConfig::default();
    let (model, _) = train::train(
        &cfg,
        &ds.samples(Split::Train, cfg.t_obs)?,
        &[],
        &TrainConfig {
            epochs: 5,
            ..Default::default()
        },
    )?;
    let test = &ds.samples(Split::Test, cfg.t_obs)?[0];
    let pred = model.predict(&test.obs, test.targets.len(), test.dt)?;
    let key = test.targets.last().expect("targets").data().to_vec();
    let out = std::env::temp_dir().join("netdyn_state_grid");
    std::fs::create_dir_all(&out)?;
    for frac in [0.125, 0.375, 0.925] {
        let t = (frac * 199.0_f64).round() as usize;
        let k = t - cfg.t_obs;
        let truth = metrics::grid_layout(test.targets[k].data(), &key)?;
        let guess = metrics::grid_layout(pred[k].data(), &key)?;
        metrics::write_grid_csv(&out.join(format!("grid_truth_{t}.csv")), &truth)?;
        metrics::write_grid_csv(&out.join(format!("grid_pred_{t}.csv")), &guess)?;
        let err = metrics::mae(pred[k].data(), test.targets[k].data())?;
        println!("t index {t}: {}x{} grid, MAE {err:.4}", truth.len(), truth[0].len());
    }
    println!("grids in {}", out.display());
    Ok(())
}
