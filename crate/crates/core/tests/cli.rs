use netdyn::dataset::{self, Dataset};
use netdyn::dynamics::{self, DynamicsConstants, DynamicsFamily, IcMode};
use netdyn::graph::TopologySpec;
use netdyn::model::{Model, ModelConfig};
use serde_json::{json, Value};
use std::fs;
use std::path::Path;
use std::process::Command;

const TINY: &str = r#"{
    "dataset": { "n_train": 2, "n_val": 1, "n_test": 2, "n_timestamps": 40, "topology": { "n_nodes": 9, "p": 0.4 } },
    "model": { "t_obs": 6, "latent_dim": 4, "n_heads": 2 },
    "train": { "epochs": 2 },
    "scalability": { "n_nodes": 20, "lengths": [5, 10, 20, 34] },
    "sweep": { "latent_dim": [4, 2, 4, 3], "t_obs": [] },
    "noise": { "sigmas": [0.0, 0.1] }
}"#;

fn netdyn(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_netdyn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn write_config(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    fs::write(&p, v.to_string()).unwrap();
    p.to_str().unwrap().to_string()
}

fn tiny(dir: &Path, patch: Value) -> String {
    let mut v: Value = serde_json::from_str(TINY).unwrap();
    netdyn::experiment::merge(&mut v, &patch);
    write_config(dir, "config.json", &v)
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn exit_codes_follow_error_categories() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(netdyn(&["train", "--config", s(&d.join("missing.json"))]).0, 2);
    let bad = write_config(d, "bad.json", &json!({ "model": { "latent_dim": 0 } }));
    assert_eq!(netdyn(&["train", "--config", &bad]).0, 2);

    // A dataset directory whose trajectory files are gone.
    let cfg = tiny(d, json!({}));
    let data = d.join("data");
    assert_eq!(netdyn(&["gen-data", "--config", &cfg, "--out", s(&data)]).0, 0);
    for e in fs::read_dir(&data).unwrap() {
        let p = e.unwrap().path();
        if p.file_name().unwrap().to_str().unwrap().starts_with("trajectory_") {
            fs::remove_file(p).unwrap();
        }
    }
    let cfg = tiny(d, json!({ "dataset_dir": s(&data) }));
    let (code, err) = netdyn(&["train", "--config", &cfg, "--out", s(&d.join("t"))]);
    assert_eq!(code, 4, "{err}");

    let cfg = tiny(d, json!({ "train": { "lr0": 1e300, "grad_clip": 0.0, "weight_decay": 0.0 } }));
    let (code, err) = netdyn(&["train", "--config", &cfg, "--out", s(&d.join("nan"))]);
    assert_eq!(code, 3, "{err}");
}

#[test]
fn gen_data_is_bit_identical_and_manifest_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path(), json!({}));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(netdyn(&["gen-data", "--config", &cfg, "--out", s(&a), "--seed", "4"]).0, 0);
    assert_eq!(netdyn(&["gen-data", "--config", &cfg, "--out", s(&b), "--seed", "4"]).0, 0);
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 5 * 3 + 2);
    for n in &names {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap(), "{n:?}");
    }
    let ds = Dataset::read(&a).unwrap();
    assert_eq!(ds.manifest.splits.train.len(), 2);
    assert_eq!(ds.manifest.splits.test.len(), 2);
    assert_eq!(ds.instances.len(), 5);
}

#[test]
fn profiles_have_documented_scales() {
    use netdyn::experiment::ExperimentConfig;
    let full = ExperimentConfig::resolve(&json!({ "profile": "full" })).unwrap();
    let d = &full.dataset;
    assert_eq!((d.n_train + d.n_val + d.n_test, d.topology.n_nodes), (140, 100));
    let desk = ExperimentConfig::resolve(&json!({})).unwrap();
    let d = &desk.dataset;
    assert_eq!((d.n_train, d.n_val, d.n_test, d.topology.n_nodes), (20, 5, 5, 30));
    let mixed = ExperimentConfig::resolve(&json!({ "dataset": { "mixed": true, "topology": { "m": 3 } } })).unwrap();
    let ds = dataset::generate(&mixed.dataset, 0, false).unwrap();
    assert_eq!(ds.manifest.splits.train.len(), 60);
    assert_eq!(ds.manifest.topology, "Mixed");
}

#[test]
fn train_eval_and_report_contents() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = tiny(tmp.path(), json!({}));
    let (code, err) = netdyn(&["train", "--config", &cfg, "--out", s(&out), "--deterministic"]);
    assert_eq!(code, 0, "{err}");
    let r = report(&out);
    assert_eq!(r["command"], "train");
    assert_eq!(r["config"]["train"]["epochs"], 2);
    assert_eq!(r["config"]["model"]["activation"], "gelu");
    assert_eq!(r["test"]["per_trajectory"].as_array().unwrap().len(), 2);
    assert!(out.join("checkpoint/model_config.json").exists());
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    assert!(history.starts_with("epoch,lr,train_loss,val_loss"));

    let (code, err) = netdyn(&["eval", "--config", &cfg, "--out", s(&out), "--deterministic"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(report(&out)["test"], r["test"]);
}

#[test]
fn n_seeds_aggregates_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("multi");
    let cfg = tiny(tmp.path(), json!({ "train": { "epochs": 1 } }));
    let (code, err) = netdyn(&["train", "--config", &cfg, "--out", s(&out), "--seed", "10", "--n-seeds", "2"]);
    assert_eq!(code, 0, "{err}");
    let r = report(&out);
    assert_eq!(r["seeds"], json!([10, 11]));
    assert!(out.join("seed_11/checkpoint").exists());
    let test = r["seed_summary"].as_array().unwrap().iter().find(|x| x["label"] == "test").unwrap();
    assert!(test["mae_std"].as_f64().unwrap() >= 0.0);
}

#[test]
fn ood_noise_scalability_and_sweep_with_untrained_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tmp.path().join("ckpt");
    let mc = ModelConfig {
        t_obs: 6,
        latent_dim: 4,
        n_heads: 2,
        ..Default::default()
    };
    Model::new(mc, 0).unwrap().save(&ckpt).unwrap();
    let cfg = tiny(tmp.path(), json!({ "checkpoint": s(&ckpt), "ood": { "density": [0.3] } }));

    let out = tmp.path().join("ood");
    let (code, err) = netdyn(&["ood", "--config", &cfg, "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    let r = report(&out);
    let labels: Vec<&str> = r["summary"].as_array().unwrap().iter().map(|x| x["label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["id", "topology", "weights", "initial_condition", "density_0.3"]);
    assert_eq!(r["scenarios"]["topology"]["topology"]["p"], 0.8);
    assert_eq!(r["scenarios"]["weights"]["topology"]["weight_range"], json!([2.0, 3.0]));

    let out = tmp.path().join("noise");
    assert_eq!(netdyn(&["noise", "--config", &cfg, "--out", s(&out)]).0, 0);
    let csv = fs::read_to_string(out.join("noise.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let clean_out = tmp.path().join("clean");
    assert_eq!(netdyn(&["eval", "--config", &cfg, "--out", s(&clean_out)]).0, 0);
    let clean = report(&clean_out);
    let sigma0 = &report(&out)["rows"][0];
    assert_eq!(sigma0["mae"], clean["test"]["aggregate"]["mae_mean"]);

    let out = tmp.path().join("scale");
    assert_eq!(netdyn(&["scalability", "--config", &cfg, "--out", s(&out)]).0, 0);
    let r = report(&out);
    assert_eq!(r["rows"].as_array().unwrap().len(), 4);
    assert_eq!(r["test_topology"]["n_nodes"], 20);

    let capped = tiny(tmp.path(), json!({ "checkpoint": s(&ckpt), "scalability": { "n_nodes": 6000 } }));
    assert_eq!(netdyn(&["scalability", "--config", &capped, "--out", s(&tmp.path().join("big"))]).0, 2);

    let out = tmp.path().join("sweep");
    let (code, err) = netdyn(&["sweep", "--config", &cfg, "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3, "{csv}");
    let over = tiny(tmp.path(), json!({ "sweep": { "latent_dim": [], "t_obs": [9] } }));
    assert_eq!(netdyn(&["sweep", "--config", &over, "--out", s(&tmp.path().join("sw2"))]).0, 2);
}

#[test]
fn transductive_on_exported_panel() {
    let tmp = tempfile::tempdir().unwrap();
    let topo = TopologySpec {
        n_nodes: 6,
        p: 0.5,
        ..Default::default()
    };
    let (_, _, traj) = dynamics::simulate_instance(
        DynamicsFamily::Regulatory,
        &topo,
        &DynamicsConstants::default(),
        IcMode::InDistribution,
        5.0,
        150,
        1,
    )
    .unwrap();
    let panel = tmp.path().join("panel.csv");
    dataset::write_panel_csv(&panel, &traj, None).unwrap();
    let (back, _) = dataset::read_panel_csv(&panel).unwrap();
    assert_eq!(back, traj);

    let cfg = tiny(
        tmp.path(),
        json!({ "transductive": { "csv": s(&panel), "split_index": 90 }, "model": { "latent_dim": 3 }, "train": { "epochs": 1 } }),
    );
    let out = tmp.path().join("td");
    let (code, err) = netdyn(&["transductive", "--config", &cfg, "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    let r = report(&out);
    let hs = r["horizons"].as_array().unwrap();
    assert_eq!(hs.iter().map(|h| h["horizon"].as_u64().unwrap()).collect::<Vec<_>>(), [7, 14, 21]);
    assert_eq!(hs[0]["n_train_windows"], 90 - 28 + 1);
    assert_eq!(hs[2]["n_test_windows"], 150 - 42 - 90 + 1);

    fs::write(&panel, "node_id,timestamp,f_0\n0,0,1\n1,1,2\n").unwrap();
    let (code, err) = netdyn(&["transductive", "--config", &cfg, "--out", s(&tmp.path().join("gap"))]);
    assert_eq!(code, 2);
    assert!(err.contains("missing"), "{err}");
}

#[test]
fn locked_output_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path(), json!({}));
    let out = tmp.path().join("locked");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".netdyn.lock"), "").unwrap();
    let (code, err) = netdyn(&["gen-data", "--config", &cfg, "--out", s(&out)]);
    assert_eq!(code, 4);
    assert!(err.contains("locked"));
}
