//! Experiment protocols behind the `netdyn` command line.
//!
//! A config file is a partial [`ExperimentConfig`]; it is deep-merged over
//! the chosen profile (`desk` or `full`) and the fully resolved result is
//! echoed into every report.

use crate::dataset::{self, Dataset, DatasetSpec, Split};
use crate::dynamics::{self, DynamicsFamily, IcMode};
use crate::error::{Error, Result};
use crate::graph::{TopologyFamily, TopologySpec};
use crate::metrics::{self, write_curves_csv, write_grid_csv};
use crate::model::{Model, ModelConfig};
use crate::rng;
use crate::train::{self, Aggregate, EvalReport, Sample, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// N = 30, 20/5/5 graphs, 40 epochs. Minutes on one core.
    #[default]
    Desk,
    /// N = 100, 100/20/20 graphs, 80 epochs.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodConfig {
    /// Instances per scenario; defaults to the test split size.
    pub n_instances: Option<usize>,
    /// Shifted topology. `None` doubles the density parameter of the
    /// training family (ER p, SF m, community p_out).
    pub topology: Option<TopologySpec>,
    pub weight_range: [f64; 2],
    pub ic_shift: bool,
    /// Mean degree over N for the ER density sweep; empty skips it.
    pub density: Vec<f64>,
}

impl Default for OodConfig {
    fn default() -> Self {
        Self {
            n_instances: None,
            topology: None,
            weight_range: [2.0, 3.0],
            ic_shift: true,
            density: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalabilityConfig {
    pub n_nodes: usize,
    /// Refuse larger graphs; dense attention is O(N^2) memory.
    pub max_nodes: usize,
    pub n_instances: Option<usize>,
    pub lengths: Vec<usize>,
}

impl Default for ScalabilityConfig {
    fn default() -> Self {
        Self {
            n_nodes: 300,
            max_nodes: 5000,
            n_instances: None,
            lengths: vec![10, 50, 100, 175],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub latent_dim: Vec<usize>,
    pub t_obs: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            latent_dim: vec![4, 8, 16, 32],
            t_obs: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigmas: Vec<f64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigmas: vec![0.0, 0.01, 0.05, 0.1, 0.2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransductiveConfig {
    /// Panel CSV `node_id,timestamp,f_0,...`.
    pub csv: Option<PathBuf>,
    pub t_obs: usize,
    pub horizons: Vec<usize>,
    /// Chronological split as a fraction of T, unless `split_index` is set.
    pub split_fraction: f64,
    pub split_index: Option<usize>,
}

impl Default for TransductiveConfig {
    fn default() -> Self {
        Self {
            csv: None,
            t_obs: 21,
            horizons: vec![7, 14, 21],
            split_fraction: 0.8,
            split_index: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub master_seed: u64,
    pub dataset: DatasetSpec,
    /// Existing dataset; when absent one is generated into `<out>/dataset`.
    pub dataset_dir: Option<PathBuf>,
    /// Existing checkpoint; when absent evaluation commands train first.
    pub checkpoint: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ood: OodConfig,
    pub scalability: ScalabilityConfig,
    pub sweep: SweepConfig,
    pub noise: NoiseConfig,
    pub transductive: TransductiveConfig,
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        let (dataset, epochs) = match profile {
            Profile::Desk => (
                DatasetSpec {
                    topology: TopologySpec {
                        n_nodes: 30,
                        p: 6.0 / 29.0,
                        ..Default::default()
                    },
                    n_train: 20,
                    n_val: 5,
                    n_test: 5,
                    ..Default::default()
                },
                40,
            ),
            Profile::Full => (DatasetSpec::default(), 80),
        };
        Self {
            profile,
            master_seed: 0,
            dataset,
            dataset_dir: None,
            checkpoint: None,
            output_dir: None,
            model: ModelConfig::default(),
            train: TrainConfig {
                epochs,
                ..Default::default()
            },
            ood: OodConfig::default(),
            scalability: ScalabilityConfig {
                n_nodes: if profile == Profile::Desk { 300 } else { 1000 },
                ..Default::default()
            },
            sweep: SweepConfig::default(),
            noise: NoiseConfig::default(),
            transductive: TransductiveConfig::default(),
        }
    }

    /// Resolves a partial config: profile defaults, then the user's values,
    /// then derived defaults (attention heads).
    pub fn resolve(user: &Value) -> Result<Self> {
        if !user.is_object() {
            return Err(Error::Config("config must be a JSON object".into()));
        }
        let profile: Profile = match user.get("profile") {
            Some(p) => serde_json::from_value(p.clone()).map_err(|e| Error::Config(format!("profile: {e}")))?,
            None => Profile::Desk,
        };
        let mut merged = serde_json::to_value(Self::profile(profile))?;
        merge(&mut merged, user);
        let mut cfg: Self = serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
        if user.pointer("/model/n_heads").is_none() {
            cfg.model.n_heads = default_heads(cfg.dataset.dynamics, cfg.dataset.topology.family, cfg.dataset.mixed);
        }
        cfg.train.seed = cfg.master_seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let user: Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::resolve(&user)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

/// One head for SIS on ER or SF graphs, three otherwise.
pub fn default_heads(dynamics: DynamicsFamily, topology: TopologyFamily, mixed: bool) -> usize {
    let sparse = matches!(topology, TopologyFamily::ErdosRenyi | TopologyFamily::ScaleFree);
    if dynamics == DynamicsFamily::Sis && sparse && !mixed {
        1
    } else {
        3
    }
}

/// Recursive object merge; non-object values in `over` replace `base`.
pub fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GenData,
    Train,
    Eval,
    Ood,
    Scalability,
    Sweep,
    Noise,
    Transductive,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Ood => "ood",
            Command::Scalability => "scalability",
            Command::Sweep => "sweep",
            Command::Noise => "noise",
            Command::Transductive => "transductive",
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub n_seeds: usize,
    pub out: Option<PathBuf>,
    pub deterministic: bool,
}

/// Headline numbers of one evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub label: String,
    pub mape: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
}

impl Summary {
    fn new(label: impl Into<String>, a: &Aggregate) -> Self {
        Self {
            label: label.into(),
            mape: a.mape_mean,
            mae: a.mae_mean,
            rmse: a.rmse_mean,
        }
    }
}

/// Result of one command for one seed.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: Value,
    pub summaries: Vec<Summary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedStat {
    pub label: String,
    pub mape_mean: Option<f64>,
    pub mape_std: Option<f64>,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt())
}

fn seed_stats(runs: &[RunOutput]) -> Vec<SeedStat> {
    let Some(first) = runs.first() else { return Vec::new() };
    first
        .summaries
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let rows: Vec<&Summary> = runs.iter().filter_map(|r| r.summaries.get(k)).collect();
            let mapes: Option<Vec<f64>> = rows.iter().map(|r| r.mape).collect();
            let (mape_mean, mape_std) = match mapes {
                Some(v) => {
                    let (m, s) = mean_std(&v);
                    (Some(m), Some(s))
                }
                None => (None, None),
            };
            let (mae_mean, mae_std) = mean_std(&rows.iter().map(|r| r.mae).collect::<Vec<_>>());
            let (rmse_mean, rmse_std) = mean_std(&rows.iter().map(|r| r.rmse).collect::<Vec<_>>());
            SeedStat {
                label: s.label.clone(),
                mape_mean,
                mape_std,
                mae_mean,
                mae_std,
                rmse_mean,
                rmse_std,
            }
        })
        .collect()
}

/// Exclusive ownership of an output directory for one invocation.
struct Lock(PathBuf);

impl Lock {
    fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(".netdyn.lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Io(std::io::Error::new(
                e.kind(),
                format!("{} is locked by another run (remove {} if stale)", dir.display(), path.display()),
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Caps the global rayon pool at `NETDYN_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("NETDYN_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("NETDYN_THREADS = {v:?} is not a positive integer")))?;
    // A pool built earlier in the process wins; that only happens in tests.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs `command` for every requested seed and writes `report.json`.
/// Returns the top-level report.
pub fn run(command: Command, mut cfg: ExperimentConfig, opts: &RunOptions) -> Result<Value> {
    if let Some(s) = opts.seed {
        cfg.master_seed = s;
        cfg.train.seed = s;
    }
    if opts.deterministic {
        cfg.train.deterministic = true;
    }
    let out = opts
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(command.name()));
    let _lock = Lock::acquire(&out)?;
    let n_seeds = opts.n_seeds.max(1);
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|k| cfg.master_seed.wrapping_add(k)).collect();
    let mut runs = Vec::with_capacity(n_seeds);
    for &seed in &seeds {
        let dir = if n_seeds == 1 { out.clone() } else { out.join(format!("seed_{seed}")) };
        fs::create_dir_all(&dir)?;
        let mut c = cfg.clone();
        c.master_seed = seed;
        c.train.seed = seed;
        log::info!("{} seed {seed} -> {}", command.name(), dir.display());
        let r = run_one(command, &c, &dir)?;
        if n_seeds > 1 {
            write_json(&dir.join("report.json"), &r.report)?;
        }
        runs.push(r);
    }
    let report = if n_seeds == 1 {
        let mut r = runs.remove(0).report;
        r["command"] = json!(command.name());
        r["config"] = serde_json::to_value(&cfg)?;
        r
    } else {
        json!({
            "command": command.name(),
            "config": cfg,
            "seeds": seeds,
            "seed_summary": seed_stats(&runs),
            "runs": runs.iter().map(|r| r.report.clone()).collect::<Vec<_>>(),
        })
    };
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

fn run_one(command: Command, cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    match command {
        Command::GenData => cmd_gen_data(cfg, dir),
        Command::Train => cmd_train(cfg, dir),
        Command::Eval => cmd_eval(cfg, dir),
        Command::Ood => cmd_ood(cfg, dir),
        Command::Scalability => cmd_scalability(cfg, dir),
        Command::Sweep => cmd_sweep(cfg, dir),
        Command::Noise => cmd_noise(cfg, dir),
        Command::Transductive => cmd_transductive(cfg, dir),
    }
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

fn single_thread(cfg: &ExperimentConfig) -> bool {
    cfg.train.deterministic
}

pub fn cmd_gen_data(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let ds = dataset::generate(&cfg.dataset, cfg.master_seed, single_thread(cfg))?;
    ds.write(dir)?;
    Ok(RunOutput {
        report: json!({ "manifest": ds.manifest }),
        summaries: Vec::new(),
    })
}

fn load_or_generate(cfg: &ExperimentConfig, dir: &Path) -> Result<Dataset> {
    let ds = match &cfg.dataset_dir {
        Some(p) => Dataset::read(p)?,
        None => {
            let ds = dataset::generate(&cfg.dataset, cfg.master_seed, single_thread(cfg))?;
            ds.write(&dir.join("dataset"))?;
            ds
        }
    };
    if ds.manifest.dim != cfg.model.feature_dim {
        return Err(Error::Config(format!(
            "dataset has {} features per node, model expects {}",
            ds.manifest.dim, cfg.model.feature_dim
        )));
    }
    Ok(ds)
}

/// Trains on the dataset's train split (validating on val each epoch) and
/// writes `checkpoint/` and `history.csv` under `dir`.
fn train_model(cfg: &ExperimentConfig, ds: &Dataset, dir: &Path) -> Result<Model> {
    let t_obs = cfg.model.t_obs;
    let (model, history) = train::train(
        &cfg.model,
        &ds.samples(Split::Train, t_obs)?,
        &ds.samples(Split::Val, t_obs)?,
        &cfg.train,
    )?;
    model.save(&dir.join("checkpoint"))?;
    train::write_history_csv(&dir.join("history.csv"), &history)?;
    Ok(model)
}

fn obtain_model(cfg: &ExperimentConfig, ds: &Dataset, dir: &Path) -> Result<Model> {
    match &cfg.checkpoint {
        Some(p) => Model::load(p),
        None => train_model(cfg, ds, dir),
    }
}

fn brief(r: &EvalReport) -> Value {
    json!({ "aggregate": r.aggregate, "per_trajectory": r.per_trajectory })
}

pub fn cmd_train(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let ds = load_or_generate(cfg, dir)?;
    let model = train_model(cfg, &ds, dir)?;
    evaluation_output(cfg, &ds, &model, dir)
}

pub fn cmd_eval(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let ds = load_or_generate(cfg, dir)?;
    let path = cfg
        .checkpoint
        .clone()
        .unwrap_or_else(|| dir.join("checkpoint"));
    if !path.exists() {
        return Err(Error::Config(format!(
            "eval needs a checkpoint; {} does not exist",
            path.display()
        )));
    }
    let model = Model::load(&path)?;
    evaluation_output(cfg, &ds, &model, dir)
}

/// Test-split report with persistence baseline, error curves and state
/// grids for the first test graph.
fn evaluation_output(cfg: &ExperimentConfig, ds: &Dataset, model: &Model, dir: &Path) -> Result<RunOutput> {
    let t_obs = model.config().t_obs;
    let test = ds.samples(Split::Test, t_obs)?;
    let preds = train::predict_all(model, &test, single_thread(cfg))?;
    let report = train::report_from_predictions(&test, &preds)?;
    let baseline = train::evaluate_persistence(&test)?;
    let times = &ds.split(Split::Test)[0].trajectory.times()[t_obs..];
    write_curves_csv(&dir.join("curves.csv"), times, &report.per_timestamp)?;
    let grids = write_state_grids(dir, &test[0], &preds[0], ds.manifest.n_timestamps, t_obs)?;
    Ok(RunOutput {
        summaries: vec![
            Summary::new("test", &report.aggregate),
            Summary::new("persistence", &baseline.aggregate),
        ],
        report: json!({
            "model": model.config().ode_type.model_name(),
            "n_parameters": model.n_parameters(),
            "test": report,
            "persistence": brief(&baseline),
            "grids": grids,
        }),
    })
}

/// Truth and prediction grids at 0.125, 0.375 and 0.925 of the horizon,
/// nodes ordered by their final true state.
fn write_state_grids(dir: &Path, s: &Sample, pred: &[crate::tensor::Tensor], n_times: usize, t_obs: usize) -> Result<Vec<usize>> {
    let last = s.targets.last().expect("nonempty targets");
    let key: Vec<f64> = (0..last.shape()[0]).map(|i| last.row(i)[0]).collect();
    let mut written = Vec::new();
    for frac in [0.125, 0.375, 0.925] {
        let idx = (frac * (n_times - 1) as f64).round() as usize;
        if idx < t_obs || idx - t_obs >= pred.len() {
            continue;
        }
        let k = idx - t_obs;
        let col = |t: &crate::tensor::Tensor| -> Vec<f64> { (0..t.shape()[0]).map(|i| t.row(i)[0]).collect() };
        write_grid_csv(&dir.join(format!("grid_truth_{idx}.csv")), &metrics::grid_layout(&col(&s.targets[k]), &key)?)?;
        write_grid_csv(&dir.join(format!("grid_pred_{idx}.csv")), &metrics::grid_layout(&col(&pred[k]), &key)?)?;
        written.push(idx);
    }
    Ok(written)
}

/// Same family with the density parameter doubled.
pub fn shifted_topology(t: &TopologySpec) -> TopologySpec {
    let mut s = t.clone();
    match t.family {
        TopologyFamily::ErdosRenyi => s.p = (2.0 * t.p).min(1.0),
        TopologyFamily::ScaleFree => s.m = (2 * t.m).min(t.n_nodes.saturating_sub(1)).max(1),
        TopologyFamily::Community => s.p_out = (2.0 * t.p_out).min(1.0),
    }
    s
}

fn test_only(base: &DatasetSpec, n: usize) -> DatasetSpec {
    DatasetSpec {
        mixed: false,
        n_train: 0,
        n_val: 0,
        n_test: n,
        ..base.clone()
    }
}

pub fn cmd_ood(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let ds = load_or_generate(cfg, dir)?;
    let model = obtain_model(cfg, &ds, dir)?;
    let t_obs = model.config().t_obs;
    let n = cfg.ood.n_instances.unwrap_or(cfg.dataset.n_test).max(1);
    let base = &ds.manifest.spec;
    let mut scenarios: Vec<(String, DatasetSpec)> = vec![("id".into(), test_only(base, n))];
    let topo = cfg.ood.topology.clone().unwrap_or_else(|| shifted_topology(&base.topology));
    scenarios.push((
        "topology".into(),
        DatasetSpec {
            topology: topo,
            ..test_only(base, n)
        },
    ));
    let mut w = test_only(base, n);
    w.topology.weight_range = cfg.ood.weight_range;
    scenarios.push(("weights".into(), w));
    if cfg.ood.ic_shift {
        scenarios.push((
            "initial_condition".into(),
            DatasetSpec {
                ic_mode: IcMode::OutOfDistribution,
                ..test_only(base, n)
            },
        ));
    }
    for &rho in &cfg.ood.density {
        let nn = base.topology.n_nodes as f64;
        let mut d = test_only(base, n);
        d.topology.family = TopologyFamily::ErdosRenyi;
        d.topology.p = (rho * nn / (nn - 1.0).max(1.0)).min(1.0);
        scenarios.push((format!("density_{rho}"), d));
    }
    let mut summaries = Vec::new();
    let mut sections = serde_json::Map::new();
    for (k, (label, spec)) in scenarios.iter().enumerate() {
        // "id" draws fresh graphs from the training distribution.
        let seed = rng::derive_seed(cfg.master_seed, k as u64, 31);
        let test = dataset::generate(spec, seed, single_thread(cfg))?.samples(Split::Test, t_obs)?;
        let r = train::evaluate(&model, &test, single_thread(cfg))?;
        summaries.push(Summary::new(label.clone(), &r.aggregate));
        sections.insert(
            label.clone(),
            json!({ "topology": spec.topology, "ic_mode": spec.ic_mode, "report": brief(&r) }),
        );
    }
    Ok(RunOutput {
        report: json!({
            "model": model.config().ode_type.model_name(),
            "scenarios": sections,
            "summary": summaries,
        }),
        summaries,
    })
}

/// Same family at `n_nodes`, probabilities rescaled to keep the expected
/// mean degree.
pub fn rescaled_topology(t: &TopologySpec, n_nodes: usize) -> TopologySpec {
    let mut s = TopologySpec {
        n_nodes,
        ..t.clone()
    };
    let ratio = t.mean_degree() / s.mean_degree();
    if ratio.is_finite() {
        match t.family {
            TopologyFamily::ErdosRenyi => s.p = (t.p * ratio).min(1.0),
            TopologyFamily::ScaleFree => {}
            TopologyFamily::Community => {
                s.p_in = (t.p_in * ratio).min(1.0);
                s.p_out = (t.p_out * ratio).min(1.0);
            }
        }
    }
    s
}

pub fn cmd_scalability(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let sc = &cfg.scalability;
    if sc.n_nodes > sc.max_nodes {
        return Err(Error::Config(format!(
            "scalability N = {} exceeds max_nodes = {}; raise scalability.max_nodes if memory allows (attention needs N^2 entries per head)",
            sc.n_nodes, sc.max_nodes
        )));
    }
    let ds = load_or_generate(cfg, dir)?;
    let model = obtain_model(cfg, &ds, dir)?;
    let t_obs = model.config().t_obs;
    let base = &ds.manifest.spec;
    let spec = DatasetSpec {
        topology: rescaled_topology(&base.topology, sc.n_nodes),
        ..test_only(base, sc.n_instances.unwrap_or(base.n_test).max(1))
    };
    let n_pred = spec.n_timestamps - t_obs;
    if let Some(&l) = sc.lengths.iter().find(|&&l| l == 0 || l > n_pred) {
        return Err(Error::Config(format!("prediction length {l} outside 1..={n_pred}")));
    }
    let test = dataset::generate(&spec, rng::derive_seed(cfg.master_seed, 0, 40), single_thread(cfg))?
        .samples(Split::Test, t_obs)?;
    let preds = train::predict_all(&model, &test, single_thread(cfg))?;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for &l in &sc.lengths {
        let cut: Vec<Sample> = test
            .iter()
            .map(|s| Sample {
                targets: s.targets[..l].to_vec(),
                ..s.clone()
            })
            .collect();
        let cut_preds: Vec<_> = preds.iter().map(|p| p[..l].to_vec()).collect();
        let r = train::report_from_predictions(&cut, &cut_preds)?;
        let label = format!("length_{l}");
        summaries.push(Summary::new(label, &r.aggregate));
        rows.push(json!({ "pred_length": l, "aggregate": r.aggregate }));
    }
    Ok(RunOutput {
        report: json!({
            "model": model.config().ode_type.model_name(),
            "n_parameters": model.n_parameters(),
            "train_n_nodes": base.topology.n_nodes,
            "test_topology": spec.topology,
            "rows": rows,
        }),
        summaries,
    })
}

/// Sorted, deduplicated copy.
fn dedup<T: Ord + Copy>(v: &[T]) -> Vec<T> {
    let mut v = v.to_vec();
    v.sort();
    v.dedup();
    v
}

pub fn cmd_sweep(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let ds = load_or_generate(cfg, dir)?;
    let cap = ds.manifest.n_timestamps / 5;
    let t_obs = dedup(&cfg.sweep.t_obs);
    if let Some(&t) = t_obs.iter().find(|&&t| t == 0 || t > cap) {
        return Err(Error::Config(format!(
            "condition length {t} outside 1..={cap} (at most 0.2 of {} timestamps)",
            ds.manifest.n_timestamps
        )));
    }
    let mut points: Vec<(&str, usize, ModelConfig)> = Vec::new();
    for d in dedup(&cfg.sweep.latent_dim) {
        points.push(("latent_dim", d, ModelConfig { latent_dim: d, ..cfg.model.clone() }));
    }
    for t in t_obs {
        points.push(("t_obs", t, ModelConfig { t_obs: t, ..cfg.model.clone() }));
    }
    let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
    w.write_record(["hyperparam", "value", "mape", "mae", "rmse"])?;
    let mut summaries = Vec::new();
    for (name, value, mc) in points {
        mc.validate()?;
        let (model, _) = train::train(
            &mc,
            &ds.samples(Split::Train, mc.t_obs)?,
            &ds.samples(Split::Val, mc.t_obs)?,
            &cfg.train,
        )?;
        let r = train::evaluate(&model, &ds.samples(Split::Test, mc.t_obs)?, single_thread(cfg))?;
        let a = &r.aggregate;
        w.write_record([
            name.to_string(),
            value.to_string(),
            a.mape_mean.map(|v| format!("{v:.16e}")).unwrap_or_default(),
            format!("{:.16e}", a.mae_mean),
            format!("{:.16e}", a.rmse_mean),
        ])?;
        summaries.push(Summary::new(format!("{name}={value}"), a));
    }
    w.flush()?;
    Ok(RunOutput {
        report: json!({ "rows": summaries }),
        summaries,
    })
}

pub fn cmd_noise(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let ds = load_or_generate(cfg, dir)?;
    let model = obtain_model(cfg, &ds, dir)?;
    let t_obs = model.config().t_obs;
    let mut w = csv::Writer::from_path(dir.join("noise.csv"))?;
    w.write_record(["sigma", "mape", "mae", "rmse"])?;
    let mut summaries = Vec::new();
    for (k, &sigma) in cfg.noise.sigmas.iter().enumerate() {
        let seed = rng::derive_seed(cfg.master_seed, k as u64, 32);
        let test = ds
            .split(Split::Test)
            .iter()
            .enumerate()
            .map(|(j, inst)| {
                let noisy =
                    dynamics::add_observation_noise(&inst.trajectory, t_obs, sigma, rng::derive_seed(seed, j as u64, 0))?;
                Sample::from_trajectory(&noisy, &inst.id, t_obs)
            })
            .collect::<Result<Vec<_>>>()?;
        let a = train::evaluate(&model, &test, single_thread(cfg))?.aggregate;
        w.write_record([
            format!("{sigma}"),
            a.mape_mean.map(|v| format!("{v:.16e}")).unwrap_or_default(),
            format!("{:.16e}", a.mae_mean),
            format!("{:.16e}", a.rmse_mean),
        ])?;
        summaries.push(Summary::new(format!("sigma={sigma}"), &a));
    }
    w.flush()?;
    Ok(RunOutput {
        report: json!({ "model": model.config().ode_type.model_name(), "rows": summaries }),
        summaries,
    })
}

pub fn cmd_transductive(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let tc = &cfg.transductive;
    let path = tc
        .csv
        .as_ref()
        .ok_or_else(|| Error::Config("transductive.csv is required".into()))?;
    let (series, nodes) = dataset::read_panel_csv(path)?;
    let split = tc
        .split_index
        .unwrap_or_else(|| (tc.split_fraction * series.n_times() as f64).floor() as usize);
    let mut sections = Vec::new();
    let mut summaries = Vec::new();
    for &h in &tc.horizons {
        let windows = train::transductive_windows(&series, tc.t_obs, h, split)?;
        let mc = ModelConfig {
            t_obs: tc.t_obs,
            feature_dim: series.dim(),
            ..cfg.model.clone()
        };
        let (model, history) = train::train(&mc, &windows.train, &[], &cfg.train)?;
        let hdir = dir.join(format!("horizon_{h}"));
        model.save(&hdir.join("checkpoint"))?;
        train::write_history_csv(&hdir.join("history.csv"), &history)?;
        let r = train::evaluate(&model, &windows.test, single_thread(cfg))?;
        summaries.push(Summary::new(format!("horizon_{h}"), &r.aggregate));
        sections.push(json!({
            "horizon": h,
            "n_train_windows": windows.train.len(),
            "n_test_windows": windows.test.len(),
            "aggregate": r.aggregate,
            "per_timestamp": r.per_timestamp,
        }));
    }
    Ok(RunOutput {
        report: json!({
            "n_nodes": nodes.len(),
            "n_timestamps": series.n_times(),
            "split_index": split,
            "horizons": sections,
        }),
        summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolve_merges_and_picks_heads() {
        let c = ExperimentConfig::resolve(&json!({
            "dataset": { "dynamics": "SIS", "topology": { "n_nodes": 12 } },
            "train": { "epochs": 3 }
        }))
        .unwrap();
        assert_eq!(c.dataset.topology.n_nodes, 12);
        assert_eq!(c.dataset.topology.p, 6.0 / 29.0);
        assert_eq!(c.dataset.n_train, 20);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.model.n_heads, 1);

        let c = ExperimentConfig::resolve(&json!({ "profile": "full" })).unwrap();
        assert_eq!((c.dataset.n_train, c.dataset.n_val, c.dataset.n_test), (100, 20, 20));
        assert_eq!(c.train.epochs, 80);
        assert_eq!(c.model.n_heads, 3);
    }

    #[test]
    fn unknown_field_is_config_error() {
        let e = ExperimentConfig::resolve(&json!({ "modle": {} })).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn rescaling_keeps_mean_degree() {
        let t = TopologySpec {
            n_nodes: 30,
            p: 6.0 / 29.0,
            ..Default::default()
        };
        let s = rescaled_topology(&t, 300);
        assert!((s.mean_degree() - 6.0).abs() < 1e-12);
        let c = TopologySpec {
            family: TopologyFamily::Community,
            n_nodes: 40,
            ..Default::default()
        };
        assert!((rescaled_topology(&c, 400).mean_degree() - c.mean_degree()).abs() < 1e-9);
    }

    #[test]
    fn ood_shift_doubles_density() {
        let t = TopologySpec::default();
        assert_eq!(shifted_topology(&t).p, 0.2);
        let sf = TopologySpec {
            family: TopologyFamily::ScaleFree,
            ..Default::default()
        };
        assert_eq!(shifted_topology(&sf).m, 8);
        let cn = TopologySpec {
            family: TopologyFamily::Community,
            ..Default::default()
        };
        assert_eq!(shifted_topology(&cn).p_out, 0.2);
    }
}
