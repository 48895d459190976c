//! Trains on 30-node ER graphs, then evaluates the same checkpoint on
//! 300-node graphs with the same mean degree, per prediction length.
//!
//! cargo run --release --example scalability

use netdyn::experiment::{self, Command, ExperimentConfig, RunOptions};
use serde_json::json;

fn main() -> netdyn::error::Result<()> {
    let out = std::env::temp_dir().join("netdyn_scalability");
    let _ = std::fs::remove_dir_all(&out);
    let cfg = ExperimentConfig::resolve(&json!({
        "dataset": { "dynamics": "Regulatory", "n_train": 10, "n_val": 2, "n_test": 2 },
        "train": { "epochs": 5 },
        "scalability": { "n_nodes": 300 }
    }))?;
    let report = experiment::run(
        Command::Scalability,
        cfg,
        &RunOptions {
            out: Some(out.clone()),
            ..Default::default()
        },
    )?;
    println!(
        "{} parameters, trained at N = {}, tested at N = {}",
        report["n_parameters"], report["train_n_nodes"], report["test_topology"]["n_nodes"]
    );
    for row in report["rows"].as_array().expect("rows") {
        let a = &row["aggregate"];
        println!(
            "length {:>3}: MAPE {:.4}  MAE {:.4}  RMSE {:.4}",
            row["pred_length"],
            a["mape_mean"].as_f64().unwrap_or(f64::NAN),
            a["mae_mean"].as_f64().unwrap_or(f64::NAN),
            a["rmse_mean"].as_f64().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
