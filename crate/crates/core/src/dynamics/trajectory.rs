use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::path::Path;

/// States `x[i, t, f]` of N nodes at T timestamps with D features,
/// stored node-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySet {
    n_nodes: usize,
    dim: usize,
    times: Vec<f64>,
    data: Vec<f64>,
}

impl TrajectorySet {
    pub fn new(n_nodes: usize, dim: usize, times: Vec<f64>, data: Vec<f64>) -> Result<Self> {
        if n_nodes == 0 || dim == 0 || times.is_empty() {
            return Err(Error::Shape("trajectory needs N, D, T > 0".into()));
        }
        if data.len() != n_nodes * times.len() * dim {
            return Err(Error::Shape(format!(
                "trajectory data has {} values, expected {n_nodes}x{}x{dim}",
                data.len(),
                times.len()
            )));
        }
        Ok(Self {
            n_nodes,
            dim,
            times,
            data,
        })
    }

    /// From a list of per-timestamp snapshots, each laid out `[node][feature]`.
    pub fn from_time_major(states: &[Vec<f64>], times: Vec<f64>, dim: usize) -> Result<Self> {
        if states.len() != times.len() || states.is_empty() {
            return Err(Error::Shape(format!(
                "{} snapshots for {} timestamps",
                states.len(),
                times.len()
            )));
        }
        let width = states[0].len();
        if dim == 0 || width % dim != 0 || states.iter().any(|s| s.len() != width) {
            return Err(Error::Shape("ragged or misaligned snapshots".into()));
        }
        let n = width / dim;
        let t_len = times.len();
        let mut data = vec![0.0; n * t_len * dim];
        for (t, s) in states.iter().enumerate() {
            for i in 0..n {
                let dst = (i * t_len + t) * dim;
                data[dst..dst + dim].copy_from_slice(&s[i * dim..(i + 1) * dim]);
            }
        }
        Self::new(n, dim, times, data)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn idx(&self, i: usize, t: usize, f: usize) -> usize {
        (i * self.times.len() + t) * self.dim + f
    }

    #[inline]
    pub fn get(&self, i: usize, t: usize, f: usize) -> f64 {
        self.data[self.idx(i, t, f)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, t: usize, f: usize, v: f64) {
        let k = self.idx(i, t, f);
        self.data[k] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Timestamps `start..start + len`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.n_times() {
            return Err(Error::Shape(format!(
                "window {start}..{} outside 0..{}",
                start + len,
                self.n_times()
            )));
        }
        let mut data = Vec::with_capacity(self.n_nodes * len * self.dim);
        for i in 0..self.n_nodes {
            let a = self.idx(i, start, 0);
            data.extend_from_slice(&self.data[a..a + len * self.dim]);
        }
        Self::new(self.n_nodes, self.dim, self.times[start..start + len].to_vec(), data)
    }

    /// `[N, len * D]`: each row is one node's flattened history over the window.
    pub fn node_history(&self, start: usize, len: usize) -> Result<Tensor> {
        let w = self.window(start, len)?;
        Tensor::matrix(self.n_nodes, len * self.dim, w.data)
    }

    /// `[N, D]` snapshot at timestamp `t`.
    pub fn state_at(&self, t: usize) -> Tensor {
        let mut out = Vec::with_capacity(self.n_nodes * self.dim);
        for i in 0..self.n_nodes {
            let a = self.idx(i, t, 0);
            out.extend_from_slice(&self.data[a..a + self.dim]);
        }
        Tensor::matrix(self.n_nodes, self.dim, out).expect("consistent shape")
    }

    /// Snapshots `start..start + len` as `[N, D]` tensors.
    pub fn states(&self, start: usize, len: usize) -> Vec<Tensor> {
        (start..start + len).map(|t| self.state_at(t)).collect()
    }

    /// Node `k` of the result is node `perm^-1(k)` of `self`, i.e. node `i`
    /// moves to position `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_nodes {
            return Err(Error::Shape("permutation length mismatch".into()));
        }
        let stride = self.n_times() * self.dim;
        let mut data = vec![0.0; self.data.len()];
        for (i, &p) in perm.iter().enumerate() {
            data[p * stride..(p + 1) * stride].copy_from_slice(&self.data[i * stride..(i + 1) * stride]);
        }
        Self::new(self.n_nodes, self.dim, self.times.clone(), data)
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        for i in 0..self.n_nodes {
            if self.dim == 1 {
                h.push(format!("x_{i}"));
            } else {
                for f in 0..self.dim {
                    h.push(format!("x_{i}_{f}"));
                }
            }
        }
        h
    }

    /// CSV with one row per timestamp, floats in round-trip precision.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.header())?;
        for (t, time) in self.times.iter().enumerate() {
            let mut row = vec![format!("{time:.16e}")];
            for i in 0..self.n_nodes {
                for f in 0..self.dim {
                    row.push(format!("{:.16e}", self.get(i, t, f)));
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, dim: usize) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let width = r.headers()?.len();
        if width < 2 || (width - 1) % dim != 0 {
            return Err(Error::Ingestion(format!(
                "{}: header has {width} columns, not 1 + N*{dim}",
                path.display()
            )));
        }
        let mut times = Vec::new();
        let mut states = Vec::new();
        for (k, rec) in r.records().enumerate() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Ingestion(format!("{} row {}: {e}", path.display(), k + 1)))?;
            times.push(vals[0]);
            states.push(vals[1..].to_vec());
        }
        Self::from_time_major(&states, times, dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TrajectorySet {
        TrajectorySet::from_time_major(
            &[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]],
            vec![0.0, 0.5],
            1,
        )
        .unwrap()
    }

    #[test]
    fn layout_and_window() {
        let s = sample();
        assert_eq!(s.get(2, 1, 0), 6.0);
        let w = s.window(1, 1).unwrap();
        assert_eq!(w.data(), &[4.0, 5.0, 6.0]);
        assert_eq!(s.node_history(0, 2).unwrap().row(1), &[2.0, 5.0]);
        assert!(s.window(1, 2).is_err());
    }

    #[test]
    fn permutation_moves_rows() {
        let s = sample().permuted(&[2, 0, 1]).unwrap();
        assert_eq!(s.state_at(0).data(), &[2.0, 3.0, 1.0]);
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("traj.csv");
        let mut s = sample();
        s.set(0, 0, 0, 0.1 + 0.2);
        s.write_csv(&p).unwrap();
        assert_eq!(TrajectorySet::read_csv(&p, 1).unwrap(), s);
    }
}
