//! Observation-noise robustness and a latent-dimension sweep on small
//! Regulatory datasets.
//!
//! cargo run --release --example noise_sweep

use netdyn::experiment::{self, Command, ExperimentConfig, RunOptions};
use serde_json::json;

fn main() -> netdyn::error::Result<()> {
    let root = std::env::temp_dir().join("netdyn_noise_sweep");
    let _ = std::fs::remove_dir_all(&root);
    let base = json!({
        "dataset": { "n_train": 6, "n_val": 2, "n_test": 3 },
        "train": { "epochs": 4 },
        "noise": { "sigmas": [0.0, 0.05, 0.1, 0.2, 0.4] },
        "sweep": { "latent_dim": [4, 8, 16], "t_obs": [10, 25, 40] }
    });
    let run = |cmd, dir: &str| {
        experiment::run(
            cmd,
            ExperimentConfig::resolve(&base)?,
            &RunOptions {
                out: Some(root.join(dir)),
                ..Default::default()
            },
        )
    };
    let noise = run(Command::Noise, "noise")?;
    for row in noise["rows"].as_array().expect("rows") {
        println!("{:<12} MAE {:.4}", row["label"].as_str().unwrap_or("?"), row["mae"].as_f64().unwrap_or(f64::NAN));
    }
    let sweep = run(Command::Sweep, "sweep")?;
    for row in sweep["rows"].as_array().expect("rows") {
        println!("{:<12} MAE {:.4}", row["label"].as_str().unwrap_or("?"), row["mae"].as_f64().unwrap_or(f64::NAN));
    }
    println!("CSV output under {}", root.display());
    Ok(())
}
