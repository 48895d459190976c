//! On-disk trajectory datasets and panel CSV ingestion.
//!
//! A dataset directory holds `manifest.json` plus, for every instance `id`,
//! `graph_<id>.json`, `dynamics_<id>.json` and `trajectory_<id>.csv`.

use crate::dynamics::{self, DynamicsConstants, DynamicsFamily, DynamicsSpec, IcMode, TrajectorySet};
use crate::error::{Error, Result};
use crate::graph::{self, TopologyFamily, TopologySpec, WeightedGraph};
use crate::rng;
use crate::train::{ordered_map, Sample};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

/// What to simulate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub dynamics: DynamicsFamily,
    pub topology: TopologySpec,
    /// One block per topology family (ER, SF, Community), each of the
    /// configured split sizes.
    pub mixed: bool,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub n_timestamps: usize,
    /// Defaults to the family's horizon (2 for Mutualistic, 5 otherwise).
    pub t_final: Option<f64>,
    pub ic_mode: IcMode,
    pub constants: DynamicsConstants,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            dynamics: DynamicsFamily::Regulatory,
            topology: TopologySpec::default(),
            mixed: false,
            n_train: 100,
            n_val: 20,
            n_test: 20,
            n_timestamps: 200,
            t_final: None,
            ic_mode: IcMode::InDistribution,
            constants: DynamicsConstants::default(),
        }
    }
}

impl DatasetSpec {
    pub fn t_final(&self) -> f64 {
        self.t_final.unwrap_or_else(|| self.dynamics.default_t_final())
    }

    pub fn families(&self) -> Vec<TopologyFamily> {
        if self.mixed {
            TopologyFamily::ALL.to_vec()
        } else {
            vec![self.topology.family]
        }
    }

    pub fn per_family(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }

    pub fn validate(&self) -> Result<()> {
        if self.per_family() == 0 {
            return Err(Error::Config("dataset needs at least one instance".into()));
        }
        if self.n_timestamps < 2 || !(self.t_final() > 0.0) {
            return Err(Error::Config("need t_final > 0 and at least 2 timestamps".into()));
        }
        for fam in self.families() {
            TopologySpec {
                family: fam,
                ..self.topology.clone()
            }
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub dynamics: DynamicsFamily,
    /// Topology label, or `Mixed`.
    pub topology: String,
    pub n_nodes: usize,
    pub n_timestamps: usize,
    pub dim: usize,
    pub t_final: f64,
    pub splits: Splits,
    pub master_seed: u64,
    pub spec: DatasetSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub topology: TopologySpec,
    pub dynamics: DynamicsSpec,
    pub ic_mode: IcMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub id: String,
    pub meta: InstanceMeta,
    pub graph: WeightedGraph,
    pub trajectory: TrajectorySet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub instances: Vec<Instance>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

fn family_tag(f: TopologyFamily) -> u64 {
    match f {
        TopologyFamily::ErdosRenyi => 0,
        TopologyFamily::ScaleFree => 1,
        TopologyFamily::Community => 2,
    }
}

/// Simulates every instance of `spec`. Instance `k` of topology family `f`
/// depends only on `(master_seed, f, k)`, so a mixed dataset is exactly the
/// concatenation of the three single-family datasets.
pub fn generate(spec: &DatasetSpec, master_seed: u64, single_thread: bool) -> Result<Dataset> {
    spec.validate()?;
    let per = spec.per_family();
    let mut jobs = Vec::new();
    let mut splits = Splits::default();
    for fam in spec.families() {
        let fam_seed = rng::derive_seed(master_seed, family_tag(fam), 3);
        for k in 0..per {
            let id = format!("{}_{k:04}", fam.label().to_lowercase());
            match k {
                k if k < spec.n_train => splits.train.push(id.clone()),
                k if k < spec.n_train + spec.n_val => splits.val.push(id.clone()),
                _ => splits.test.push(id.clone()),
            }
            jobs.push((id, fam, rng::derive_seed(fam_seed, k as u64, 0)));
        }
    }
    let instances = ordered_map(&jobs, single_thread, |(id, fam, seed)| {
        simulate(spec, id, *fam, *seed)
    })?;
    let manifest = Manifest {
        version: FORMAT_VERSION,
        dynamics: spec.dynamics,
        topology: if spec.mixed {
            "Mixed".into()
        } else {
            spec.topology.family.label().into()
        },
        n_nodes: spec.topology.n_nodes,
        n_timestamps: spec.n_timestamps,
        dim: 1,
        t_final: spec.t_final(),
        splits,
        master_seed,
        spec: spec.clone(),
    };
    Ok(Dataset { manifest, instances })
}

fn simulate(spec: &DatasetSpec, id: &str, fam: TopologyFamily, seed: u64) -> Result<Instance> {
    let topology = TopologySpec {
        family: fam,
        seed: rng::derive_seed(seed, 0, 0),
        ..spec.topology.clone()
    };
    let (graph, dynamics, trajectory) = dynamics::simulate_instance(
        spec.dynamics,
        &topology,
        &spec.constants,
        spec.ic_mode,
        spec.t_final(),
        spec.n_timestamps,
        seed,
    )
    .map_err(|e| match e {
        Error::Integration { time, reason } => Error::Integration {
            time,
            reason: format!("instance {id}: {reason}"),
        },
        other => other,
    })?;
    Ok(Instance {
        id: id.to_string(),
        meta: InstanceMeta {
            topology,
            dynamics,
            ic_mode: spec.ic_mode,
        },
        graph,
        trajectory,
    })
}

impl Dataset {
    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.manifest.splits.train,
            Split::Val => &self.manifest.splits.val,
            Split::Test => &self.manifest.splits.test,
        }
    }

    pub fn instance(&self, id: &str) -> Option<&Instance> {
        self.instances.iter().find(|i| i.id == id)
    }

    pub fn split(&self, split: Split) -> Vec<&Instance> {
        let index: HashMap<&str, &Instance> = self.instances.iter().map(|i| (i.id.as_str(), i)).collect();
        self.ids(split).iter().filter_map(|id| index.get(id.as_str()).copied()).collect()
    }

    /// Full-window samples (condition on `t_obs`, predict the rest).
    pub fn samples(&self, split: Split, t_obs: usize) -> Result<Vec<Sample>> {
        self.split(split)
            .into_iter()
            .map(|inst| Sample::from_trajectory(&inst.trajectory, &inst.id, t_obs))
            .collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for inst in &self.instances {
            graph::write_graph(&dir.join(format!("graph_{}.json", inst.id)), &inst.graph, &inst.meta.topology)?;
            fs::write(
                dir.join(format!("dynamics_{}.json", inst.id)),
                serde_json::to_string_pretty(&inst.meta)? + "\n",
            )?;
            inst.trajectory.write_csv(&dir.join(format!("trajectory_{}.csv", inst.id)))?;
        }
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&self.manifest)? + "\n")?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(Error::Config(format!("{} is not a dataset directory (no {MANIFEST_FILE})", dir.display())));
        }
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&path)?)?;
        if manifest.version != FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported dataset version {}", manifest.version)));
        }
        // Generation order: family-major, then instance index.
        let s = &manifest.splits;
        let mut ids: Vec<&String> = s.train.iter().chain(&s.val).chain(&s.test).collect();
        let families = manifest.spec.families();
        ids.sort_by_key(|id| {
            let fam = families
                .iter()
                .position(|f| id.starts_with(&format!("{}_", f.label().to_lowercase())))
                .unwrap_or(usize::MAX);
            (fam, id.to_string())
        });
        let mut instances = Vec::new();
        for id in ids {
            let (graph, _) = graph::read_graph(&dir.join(format!("graph_{id}.json")))?;
            let meta: InstanceMeta =
                serde_json::from_str(&fs::read_to_string(dir.join(format!("dynamics_{id}.json")))?)?;
            let trajectory = TrajectorySet::read_csv(&dir.join(format!("trajectory_{id}.csv")), manifest.dim)?;
            instances.push(Instance {
                id: id.clone(),
                meta,
                graph,
                trajectory,
            });
        }
        Ok(Self { manifest, instances })
    }
}

/// Dense panel `node_id,timestamp,f_0,...` into a trajectory; node ids in
/// order of first appearance, timestamps ascending.
pub fn read_panel_csv(path: &Path) -> Result<(TrajectorySet, Vec<String>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() < 3 || &header[0] != "node_id" || &header[1] != "timestamp" {
        return Err(Error::Ingestion(format!(
            "{}: header must be node_id,timestamp,f_0,...",
            path.display()
        )));
    }
    let dim = header.len() - 2;
    let mut nodes: Vec<String> = Vec::new();
    let mut node_index: HashMap<String, usize> = HashMap::new();
    let mut cells: HashMap<(usize, u64), Vec<f64>> = HashMap::new();
    let mut times: BTreeSet<u64> = BTreeSet::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        let node = rec[0].trim().to_string();
        let t: f64 = rec[1]
            .trim()
            .parse()
            .map_err(|e| Error::Ingestion(format!("line {row}: timestamp {:?}: {e}", &rec[1])))?;
        let vals = rec
            .iter()
            .skip(2)
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Ingestion(format!("line {row}: {e}")))?;
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Ingestion(format!("line {row}: non-finite value")));
        }
        let next = nodes.len();
        let ni = *node_index.entry(node.clone()).or_insert_with(|| {
            nodes.push(node.clone());
            next
        });
        // Order-preserving key for non-negative and negative floats alike.
        let key = ordered_bits(t);
        times.insert(key);
        if cells.insert((ni, key), vals).is_some() {
            return Err(Error::Ingestion(format!("line {row}: duplicate cell ({node}, {t})")));
        }
    }
    if nodes.is_empty() {
        return Err(Error::Ingestion(format!("{}: no data rows", path.display())));
    }
    let keys: Vec<u64> = times.into_iter().collect();
    let mut gaps = Vec::new();
    let mut n_gaps = 0usize;
    for (ni, node) in nodes.iter().enumerate() {
        for &k in &keys {
            if !cells.contains_key(&(ni, k)) {
                n_gaps += 1;
                if gaps.len() < 10 {
                    gaps.push(format!("({node}, {})", from_ordered_bits(k)));
                }
            }
        }
    }
    if n_gaps > 0 {
        return Err(Error::Ingestion(format!(
            "panel has {n_gaps} missing (node, timestamp) cells; first: {}",
            gaps.join(", ")
        )));
    }
    let times: Vec<f64> = keys.iter().map(|&k| from_ordered_bits(k)).collect();
    let mut data = Vec::with_capacity(nodes.len() * times.len() * dim);
    for ni in 0..nodes.len() {
        for &k in &keys {
            data.extend_from_slice(&cells[&(ni, k)]);
        }
    }
    Ok((TrajectorySet::new(nodes.len(), dim, times, data)?, nodes))
}

fn ordered_bits(x: f64) -> u64 {
    let b = x.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

fn from_ordered_bits(k: u64) -> f64 {
    if k >> 63 == 1 {
        f64::from_bits(k & !(1 << 63))
    } else {
        f64::from_bits(!k)
    }
}

/// Writes a trajectory as a dense panel; node ids default to `0..N`.
pub fn write_panel_csv(path: &Path, traj: &TrajectorySet, node_ids: Option<&[String]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["node_id".to_string(), "timestamp".to_string()];
    header.extend((0..traj.dim()).map(|f| format!("f_{f}")));
    w.write_record(&header)?;
    for i in 0..traj.n_nodes() {
        let id = node_ids.map(|ids| ids[i].clone()).unwrap_or_else(|| i.to_string());
        for (t, time) in traj.times().iter().enumerate() {
            let mut row = vec![id.clone(), format!("{time:.16e}")];
            row.extend((0..traj.dim()).map(|f| format!("{:.16e}", traj.get(i, t, f))));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetSpec {
        DatasetSpec {
            topology: TopologySpec {
                n_nodes: 8,
                p: 0.4,
                ..Default::default()
            },
            n_train: 2,
            n_val: 1,
            n_test: 1,
            n_timestamps: 20,
            ..Default::default()
        }
    }

    #[test]
    fn write_read_roundtrip() {
        let ds = generate(&small(), 3, true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        assert_eq!(Dataset::read(dir.path()).unwrap(), ds);
        assert_eq!(ds.samples(Split::Train, 5).unwrap().len(), 2);
    }

    #[test]
    fn mixed_is_concatenation() {
        let mut spec = small();
        spec.topology.m = 2;
        let er = generate(&spec, 3, true).unwrap();
        spec.mixed = true;
        let mixed = generate(&spec, 3, false).unwrap();
        assert_eq!(mixed.instances.len(), 12);
        assert_eq!(mixed.manifest.splits.train.len(), 6);
        assert_eq!(mixed.instances[..4], er.instances[..]);
    }

    #[test]
    fn panel_roundtrip_and_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let traj = TrajectorySet::from_time_major(
            &[vec![1.0, 2.0], vec![0.1 + 0.2, -4.0], vec![5.0, 6.0]],
            vec![-1.0, 0.5, 2.0],
            1,
        )
        .unwrap();
        let p = dir.path().join("panel.csv");
        write_panel_csv(&p, &traj, None).unwrap();
        let (back, ids) = read_panel_csv(&p).unwrap();
        assert_eq!(back, traj);
        assert_eq!(ids, vec!["0", "1"]);

        fs::write(&p, "node_id,timestamp,f_0\na,0,1\na,1,2\nb,0,3\n").unwrap();
        match read_panel_csv(&p) {
            Err(Error::Ingestion(m)) => assert!(m.contains("(b, 1)"), "{m}"),
            other => panic!("{other:?}"),
        }
    }
}
