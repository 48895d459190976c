//! Random topologies and link weights.
//!
//! All generators are undirected: an edge `{i, j}` is stored as the two
//! directed couplings `(i, j, w)` and `(j, i, w)` with one shared weight.
//! `A_ij` is the coupling from sender `j` to receiver `i`.

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;
use crate::tensor::Tensor;
use rand::Rng as _;
use serde_json::value::RawValue;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TopologyFamily {
    #[serde(rename = "ER", alias = "er")]
    ErdosRenyi,
    #[serde(rename = "SF", alias = "sf")]
    ScaleFree,
    #[serde(rename = "Community", alias = "community", alias = "CN")]
    Community,
}

impl TopologyFamily {
    pub const ALL: [TopologyFamily; 3] = [
        TopologyFamily::ErdosRenyi,
        TopologyFamily::ScaleFree,
        TopologyFamily::Community,
    ];

    pub fn label(self) -> &'static str {
        match self {
            TopologyFamily::ErdosRenyi => "ER",
            TopologyFamily::ScaleFree => "SF",
            TopologyFamily::Community => "Community",
        }
    }
}

/// Parameters of one random-graph draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologySpec {
    pub family: TopologyFamily,
    pub n_nodes: usize,
    /// ER edge probability.
    pub p: f64,
    /// Scale-free attachment count.
    pub m: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub n_communities: usize,
    pub weight_range: [f64; 2],
    pub seed: u64,
}

impl Default for TopologySpec {
    fn default() -> Self {
        Self {
            family: TopologyFamily::ErdosRenyi,
            n_nodes: 100,
            p: 0.1,
            m: 4,
            p_in: 0.25,
            p_out: 0.1,
            n_communities: 4,
            weight_range: [0.5, 1.5],
            seed: 0,
        }
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Parameter(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

impl TopologySpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes == 0 {
            return Err(Error::Parameter("n_nodes must be positive".into()));
        }
        check_probability("p", self.p)?;
        check_probability("p_in", self.p_in)?;
        check_probability("p_out", self.p_out)?;
        if self.family == TopologyFamily::ScaleFree && (self.m == 0 || self.m >= self.n_nodes) {
            return Err(Error::Parameter(format!(
                "scale-free needs 1 <= m < N, got m = {}, N = {}",
                self.m, self.n_nodes
            )));
        }
        if self.family == TopologyFamily::Community && self.n_communities == 0 {
            return Err(Error::Parameter("n_communities must be positive".into()));
        }
        check_weight_range(self.weight_range)
    }

    /// Expected mean degree of the unweighted graph.
    pub fn mean_degree(&self) -> f64 {
        let n = self.n_nodes as f64;
        match self.family {
            TopologyFamily::ErdosRenyi => (n - 1.0) * self.p,
            TopologyFamily::ScaleFree => 2.0 * ((self.n_nodes - self.m) * self.m) as f64 / n,
            TopologyFamily::Community => {
                let sizes = block_sizes(self.n_nodes, self.n_communities);
                let intra: f64 = sizes.iter().map(|&s| (s * s.saturating_sub(1)) as f64 / 2.0).sum();
                let total = n * (n - 1.0) / 2.0;
                2.0 * (intra * self.p_in + (total - intra) * self.p_out) / n
            }
        }
    }
}

fn check_weight_range(r: [f64; 2]) -> Result<()> {
    let [lo, hi] = r;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::Parameter(format!(
            "weight range [{lo}, {hi}] must satisfy 0 < lo <= hi"
        )));
    }
    Ok(())
}

/// Symmetric weighted graph without self-loops.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedGraph {
    n_nodes: usize,
    /// Directed couplings `(receiver, sender, weight)` sorted by (receiver, sender).
    edges: Vec<(usize, usize, f64)>,
}

impl WeightedGraph {
    /// Builds a graph from undirected pairs; both directions share the weight.
    pub fn from_undirected(n_nodes: usize, pairs: &[(usize, usize, f64)]) -> Result<Self> {
        let mut edges = Vec::with_capacity(pairs.len() * 2);
        for &(i, j, w) in pairs {
            if i == j || i >= n_nodes || j >= n_nodes {
                return Err(Error::Parameter(format!("invalid edge ({i}, {j}) for N = {n_nodes}")));
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Parameter(format!("edge ({i}, {j}) has weight {w}")));
            }
            edges.push((i, j, w));
            edges.push((j, i, w));
        }
        edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        if edges.windows(2).any(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::Parameter("duplicate edge".into()));
        }
        Ok(Self { n_nodes, edges })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Directed couplings `(receiver i, sender j, A_ij)`.
    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// One entry per undirected edge with `i < j`.
    pub fn undirected_edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.edges.iter().copied().filter(|(i, j, _)| i < j)
    }

    pub fn n_undirected_edges(&self) -> usize {
        self.edges.len() / 2
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n_nodes];
        for &(i, _, _) in &self.edges {
            d[i] += 1;
        }
        d
    }

    pub fn mean_degree(&self) -> f64 {
        self.edges.len() as f64 / self.n_nodes as f64
    }

    /// Sender lists per receiver: `neighbors()[i]` holds `(j, A_ij)`.
    pub fn neighbors(&self) -> Vec<Vec<(usize, f64)>> {
        let mut out = vec![Vec::new(); self.n_nodes];
        for &(i, j, w) in &self.edges {
            out[i].push((j, w));
        }
        out
    }

    pub fn adjacency(&self) -> Tensor {
        let n = self.n_nodes;
        let mut a = Tensor::zeros(&[n, n]);
        for &(i, j, w) in &self.edges {
            a.data_mut()[i * n + j] = w;
        }
        a
    }

    /// Applies a node relabelling: node `k` becomes `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let pairs: Vec<_> = self
            .undirected_edges()
            .map(|(i, j, w)| (perm[i], perm[j], w))
            .collect();
        Self::from_undirected(self.n_nodes, &pairs)
    }
}

fn unweighted(n: usize, pairs: Vec<(usize, usize)>) -> Result<WeightedGraph> {
    let pairs: Vec<_> = pairs.into_iter().map(|(i, j)| (i, j, 1.0)).collect();
    WeightedGraph::from_undirected(n, &pairs)
}

/// Erdos-Renyi G(N, p): every unordered pair independently with probability p.
pub fn gen_er(spec: &TopologySpec) -> Result<WeightedGraph> {
    check_probability("p", spec.p)?;
    let mut rng = rng::stream(spec.seed, 0);
    let n = spec.n_nodes;
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < spec.p {
                pairs.push((i, j));
            }
        }
    }
    unweighted(n, pairs)
}

/// Preferential attachment.
///
/// Starts from `m` isolated seed nodes; node `m` attaches to all of them,
/// and every later node attaches to `m` distinct existing nodes chosen with
/// probability proportional to degree.
pub fn gen_sf(spec: &TopologySpec) -> Result<WeightedGraph> {
    let (n, m) = (spec.n_nodes, spec.m);
    if m == 0 || m >= n {
        return Err(Error::Parameter(format!(
            "scale-free needs 1 <= m < N, got m = {m}, N = {n}"
        )));
    }
    let mut rng = rng::stream(spec.seed, 0);
    let mut pairs = Vec::with_capacity((n - m) * m);
    // Each edge endpoint appears once per incident edge, so uniform draws
    // from this list are degree-proportional.
    let mut endpoints: Vec<usize> = Vec::with_capacity(2 * (n - m) * m);
    let mut targets: Vec<usize> = (0..m).collect();
    for source in m..n {
        for &t in &targets {
            pairs.push((t.min(source), t.max(source)));
            endpoints.push(t);
            endpoints.push(source);
        }
        targets.clear();
        while targets.len() < m {
            let pick = endpoints[rng.random_range(0..endpoints.len())];
            if !targets.contains(&pick) {
                targets.push(pick);
            }
        }
    }
    unweighted(n, pairs)
}

/// Sizes of `k` near-equal blocks; the first `n % k` blocks get one extra node.
pub fn block_sizes(n: usize, k: usize) -> Vec<usize> {
    let k = k.max(1);
    (0..k).map(|b| n / k + usize::from(b < n % k)).collect()
}

/// Block index of every node under [`block_sizes`] (contiguous blocks).
pub fn block_membership(n: usize, k: usize) -> Vec<usize> {
    block_sizes(n, k)
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
        .collect()
}

/// Random partition graph: `p_in` within blocks, `p_out` across blocks.
pub fn gen_community(spec: &TopologySpec) -> Result<WeightedGraph> {
    check_probability("p_in", spec.p_in)?;
    check_probability("p_out", spec.p_out)?;
    if spec.n_communities == 0 {
        return Err(Error::Parameter("n_communities must be positive".into()));
    }
    let n = spec.n_nodes;
    let block = block_membership(n, spec.n_communities);
    let mut rng = rng::stream(spec.seed, 0);
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if block[i] == block[j] { spec.p_in } else { spec.p_out };
            if rng.random::<f64>() < p {
                pairs.push((i, j));
            }
        }
    }
    unweighted(n, pairs)
}

/// Draws one `Uniform[lo, hi]` weight per undirected edge.
pub fn assign_weights(g: &WeightedGraph, range: [f64; 2], seed: u64) -> Result<WeightedGraph> {
    check_weight_range(range)?;
    let [lo, hi] = range;
    let mut rng = rng::stream(seed, 1);
    let pairs: Vec<_> = g
        .undirected_edges()
        .map(|(i, j, _)| {
            let w = if lo == hi { lo } else { rng.random_range(lo..=hi) };
            (i, j, w)
        })
        .collect();
    WeightedGraph::from_undirected(g.n_nodes, &pairs)
}

/// Unweighted topology for `spec.family`.
pub fn generate_unweighted(spec: &TopologySpec) -> Result<WeightedGraph> {
    spec.validate()?;
    match spec.family {
        TopologyFamily::ErdosRenyi => gen_er(spec),
        TopologyFamily::ScaleFree => gen_sf(spec),
        TopologyFamily::Community => gen_community(spec),
    }
}

/// Topology plus weights, both derived from `spec.seed`.
pub fn generate(spec: &TopologySpec) -> Result<WeightedGraph> {
    let g = generate_unweighted(spec)?;
    assign_weights(&g, spec.weight_range, spec.seed)
}

/// Spectral radius of the weighted adjacency matrix.
pub fn adjacency_spectral_radius(g: &WeightedGraph) -> Result<f64> {
    linalg::spectral_radius(&g.adjacency(), linalg::DEFAULT_TOL)
}

#[derive(Serialize)]
struct GraphFileOut<'a> {
    n_nodes: usize,
    edges: Vec<Box<RawValue>>,
    family: &'a str,
    spec: &'a TopologySpec,
    seed: u64,
}

#[derive(Deserialize)]
struct GraphFileIn {
    n_nodes: usize,
    edges: Vec<(usize, usize, f64)>,
    #[serde(default)]
    spec: Option<TopologySpec>,
}

/// Formats a float with 17 significant digits (exact round trip).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serializes a graph to the `graph_<id>.json` layout: only `i < j` edges.
pub fn graph_to_json(g: &WeightedGraph, spec: &TopologySpec) -> Result<String> {
    let edges = g
        .undirected_edges()
        .map(|(i, j, w)| RawValue::from_string(format!("[{i},{j},{}]", fmt_f64(w))))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let out = GraphFileOut {
        n_nodes: g.n_nodes,
        edges,
        family: spec.family.label(),
        spec,
        seed: spec.seed,
    };
    Ok(serde_json::to_string_pretty(&out)? + "\n")
}

pub fn graph_from_json(text: &str) -> Result<(WeightedGraph, Option<TopologySpec>)> {
    let f: GraphFileIn = serde_json::from_str(text)?;
    if f.edges.iter().any(|&(i, j, _)| i >= j) {
        return Err(Error::Parameter("graph file edges must satisfy i < j".into()));
    }
    Ok((WeightedGraph::from_undirected(f.n_nodes, &f.edges)?, f.spec))
}

pub fn write_graph(path: &Path, g: &WeightedGraph, spec: &TopologySpec) -> Result<()> {
    fs::write(path, graph_to_json(g, spec)?)?;
    Ok(())
}

pub fn read_graph(path: &Path) -> Result<(WeightedGraph, Option<TopologySpec>)> {
    graph_from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn er(n: usize, p: f64, seed: u64) -> TopologySpec {
        TopologySpec {
            family: TopologyFamily::ErdosRenyi,
            n_nodes: n,
            p,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn er_extremes() {
        assert_eq!(gen_er(&er(5, 0.0, 1)).unwrap().n_undirected_edges(), 0);
        assert_eq!(gen_er(&er(5, 1.0, 1)).unwrap().n_undirected_edges(), 10);
    }

    #[test]
    fn er_rejects_bad_probability() {
        assert!(matches!(gen_er(&er(5, 1.5, 1)), Err(Error::Parameter(_))));
    }

    #[test]
    fn sf_edge_counts() {
        let spec = TopologySpec {
            family: TopologyFamily::ScaleFree,
            n_nodes: 100,
            m: 4,
            seed: 3,
            ..Default::default()
        };
        assert_eq!(gen_sf(&spec).unwrap().n_undirected_edges(), 384);
        let tiny = TopologySpec { n_nodes: 2, m: 1, ..spec.clone() };
        assert_eq!(gen_sf(&tiny).unwrap().n_undirected_edges(), 1);
        let bad = TopologySpec { n_nodes: 4, m: 4, ..spec };
        assert!(matches!(gen_sf(&bad), Err(Error::Parameter(_))));
    }

    #[test]
    fn community_extremes_give_disjoint_cliques() {
        let spec = TopologySpec {
            family: TopologyFamily::Community,
            n_nodes: 10,
            p_in: 1.0,
            p_out: 0.0,
            n_communities: 3,
            ..Default::default()
        };
        let g = gen_community(&spec).unwrap();
        // blocks of 4, 3, 3
        assert_eq!(g.n_undirected_edges(), 6 + 3 + 3);
        let blocks = block_membership(10, 3);
        assert!(g.edges().iter().all(|&(i, j, _)| blocks[i] == blocks[j]));
    }

    #[test]
    fn weights_are_symmetric_and_in_range() {
        let g = generate(&er(40, 0.2, 9)).unwrap();
        let a = g.adjacency();
        for i in 0..40 {
            assert_eq!(a.get2(i, i), 0.0);
            for j in 0..40 {
                assert_eq!(a.get2(i, j), a.get2(j, i));
                let w = a.get2(i, j);
                assert!(w == 0.0 || (0.5..=1.5).contains(&w));
            }
        }
    }

    #[test]
    fn unit_range_keeps_weights() {
        let g = gen_er(&er(20, 0.3, 2)).unwrap();
        assert_eq!(assign_weights(&g, [1.0, 1.0], 5).unwrap(), g);
        assert!(assign_weights(&g, [2.0, 1.0], 5).is_err());
    }

    #[test]
    fn json_roundtrip_is_exact() {
        let spec = er(15, 0.3, 11);
        let g = generate(&spec).unwrap();
        let text = graph_to_json(&g, &spec).unwrap();
        let (back, spec_back) = graph_from_json(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(spec_back.unwrap(), spec);
    }
}
