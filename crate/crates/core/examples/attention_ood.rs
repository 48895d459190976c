//! Trains the attention-edge model on Mutualistic dynamics over sparse ER
//! graphs and evaluates it on denser graphs and heavier weights.
//!
//! cargo run --release --example attention_ood [epochs]

use netdyn::experiment::{self, Command, ExperimentConfig, RunOptions};
use serde_json::json;

fn main() -> netdyn::error::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let epochs: usize = std::env::args().nth(1).map_or(10, |s| s.parse().expect("epochs"));
    let out = std::env::temp_dir().join("netdyn_attention_ood");
    let _ = std::fs::remove_dir_all(&out);
    let cfg = ExperimentConfig::resolve(&json!({
        "dataset": { "dynamics": "Mutualistic", "topology": { "p": 0.1 } },
        "model": { "ode_type": "AttentionEdge" },
        "train": { "epochs": epochs },
        "ood": { "density": [0.2, 0.5] }
    }))?;
    let report = experiment::run(
        Command::Ood,
        cfg,
        &RunOptions {
            out: Some(out.clone()),
            ..Default::default()
        },
    )?;
    for s in report["summary"].as_array().expect("summary") {
        println!(
            "{:<18} MAPE {:.4}  MAE {:.4}",
            s["label"].as_str().unwrap_or("?"),
            s["mape"].as_f64().unwrap_or(f64::NAN),
            s["mae"].as_f64().unwrap_or(f64::NAN)
        );
    }
    println!("report: {}", out.join("report.json").display());
    Ok(())
}
