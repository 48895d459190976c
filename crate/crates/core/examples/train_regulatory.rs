//! Trains a static-edge model on desk-scale Regulatory dynamics over ER
//! graphs and compares it against the persistence baseline.
//!
//! cargo run --release --example train_regulatory [epochs]

use netdyn::dataset::{self, DatasetSpec, Split};
use netdyn::dynamics::DynamicsFamily;
use netdyn::graph::{TopologyFamily, TopologySpec};
use netdyn::model::ModelConfig;
use netdyn::train::{self, TrainConfig};
use std::time::Instant;

fn main() -> netdyn::error::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let epochs = std::env::args().nth(1).map_or(40, |s| s.parse().expect("epochs"));
    let spec = DatasetSpec {
        dynamics: DynamicsFamily::Regulatory,
        topology: TopologySpec {
            family: TopologyFamily::ErdosRenyi,
            n_nodes: 30,
            p: 6.0 / 29.0,
            ..Default::default()
        },
        n_train: 20,
        n_val: 0,
        n_test: 5,
        ..Default::default()
    };
    let t0 = Instant::now();
    let ds = dataset::generate(&spec, 7, false)?;
    let t_obs = 25;
    let train_set = ds.samples(Split::Train, t_obs)?;
    let test_set = ds.samples(Split::Test, t_obs)?;
    let cfg = TrainConfig { epochs, ..Default::default() };
    let (model, _) = train::train(&ModelConfig::default(), &train_set, &[], &cfg)?;
    let trained = train::evaluate(&model, &test_set, false)?;
    let baseline = train::evaluate_persistence(&test_set)?;
    let m = trained.aggregate.mape_mean.unwrap_or(f64::NAN);
    let b = baseline.aggregate.mape_mean.unwrap_or(f64::NAN);
    println!("model       MAPE {m:.4}  MAE {:.4}", trained.aggregate.mae_mean);
    println!("persistence MAPE {b:.4}  MAE {:.4}", baseline.aggregate.mae_mean);
    println!("ratio {:.3}, {:.1} s", m / b, t0.elapsed().as_secs_f64());
    Ok(())
}
