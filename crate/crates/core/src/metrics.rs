//! Forecast error metrics.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Entries with `|true| <` this are left out of MAPE.
pub const MAPE_EPS: f64 = 1e-8;

fn check(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "prediction has {} entries, ground truth {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::UndefinedMetric("no entries to compare".into()));
    }
    Ok(())
}

/// Mean of `|pred - true| / |true|` over entries with `|true| >= 1e-8`.
pub fn mape(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    let (mut s, mut n) = (0.0, 0usize);
    for (p, t) in pred.iter().zip(truth) {
        if t.abs() >= MAPE_EPS {
            s += ((p - t) / t).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::UndefinedMetric(
            "MAPE undefined: every ground-truth entry is below 1e-8 in magnitude".into(),
        ));
    }
    Ok(s / n as f64)
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `None` when every ground-truth entry is (near) zero.
    pub mape: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
}

impl MetricReport {
    pub fn compute(pred: &[f64], truth: &[f64]) -> Result<Self> {
        let mape = match mape(pred, truth) {
            Ok(v) => Some(v),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            mape,
            mae: mae(pred, truth)?,
            rmse: rmse(pred, truth)?,
            n: pred.len(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.mae.is_finite() && self.rmse.is_finite() && self.mape.is_none_or(f64::is_finite)
    }
}

/// Accumulates metrics over many (prediction, truth) batches without
/// storing them.
#[derive(Clone, Debug, Default)]
pub struct MetricAccumulator {
    abs: f64,
    sq: f64,
    rel: f64,
    n: usize,
    n_rel: usize,
}

impl MetricAccumulator {
    pub fn push(&mut self, pred: &[f64], truth: &[f64]) -> Result<()> {
        check(pred, truth)?;
        for (p, t) in pred.iter().zip(truth) {
            let e = p - t;
            self.abs += e.abs();
            self.sq += e * e;
            if t.abs() >= MAPE_EPS {
                self.rel += (e / t).abs();
                self.n_rel += 1;
            }
        }
        self.n += pred.len();
        Ok(())
    }

    pub fn report(&self) -> Result<MetricReport> {
        if self.n == 0 {
            return Err(Error::UndefinedMetric("no entries accumulated".into()));
        }
        let n = self.n as f64;
        Ok(MetricReport {
            mape: (self.n_rel > 0).then(|| self.rel / self.n_rel as f64),
            mae: self.abs / n,
            rmse: (self.sq / n).sqrt(),
            n: self.n,
        })
    }
}

/// Per-timestamp error curves. `pred[k]` and `truth[k]` hold every entry
/// (over nodes, features and possibly trajectories) at prediction step `k`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurves {
    pub mape: Vec<Option<f64>>,
    pub mae: Vec<f64>,
    pub rmse: Vec<f64>,
}

pub fn error_vs_time(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<ErrorCurves> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predicted steps vs {} true steps",
            pred.len(),
            truth.len()
        )));
    }
    let mut c = ErrorCurves::default();
    for (p, t) in pred.iter().zip(truth) {
        let r = MetricReport::compute(p, t)?;
        c.mape.push(r.mape);
        c.mae.push(r.mae);
        c.rmse.push(r.rmse);
    }
    Ok(c)
}

/// Sums of per-step curves, so many trajectories can be averaged.
#[derive(Clone, Debug, Default)]
pub struct CurveAccumulator {
    steps: Vec<MetricAccumulator>,
}

impl CurveAccumulator {
    pub fn push(&mut self, pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::Shape("curve length mismatch".into()));
        }
        if self.steps.is_empty() {
            self.steps = vec![MetricAccumulator::default(); pred.len()];
        } else if self.steps.len() != pred.len() {
            return Err(Error::Shape("curve length differs from earlier batches".into()));
        }
        for ((acc, p), t) in self.steps.iter_mut().zip(pred).zip(truth) {
            acc.push(p, t)?;
        }
        Ok(())
    }

    pub fn curves(&self) -> Result<ErrorCurves> {
        let mut c = ErrorCurves::default();
        for acc in &self.steps {
            let r = acc.report()?;
            c.mape.push(r.mape);
            c.mae.push(r.mae);
            c.rmse.push(r.rmse);
        }
        Ok(c)
    }
}

pub fn write_curves_csv(path: &Path, times: &[f64], curves: &ErrorCurves) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "t", "mape", "mae", "rmse"])?;
    for k in 0..curves.mae.len() {
        w.write_record([
            (k + 1).to_string(),
            times.get(k).map(|t| format!("{t:.16e}")).unwrap_or_default(),
            curves.mape[k].map(|v| format!("{v:.16e}")).unwrap_or_default(),
            format!("{:.16e}", curves.mae[k]),
            format!("{:.16e}", curves.rmse[k]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Lays node values out on a `ceil(sqrt(N))`-wide square grid, row by row,
/// in ascending order of `order_key` (ties keep node order). Missing cells
/// are `NaN`.
pub fn grid_layout(values: &[f64], order_key: &[f64]) -> Result<Vec<Vec<f64>>> {
    if values.len() != order_key.len() {
        return Err(Error::Shape("grid values and ordering key differ in length".into()));
    }
    let n = values.len();
    let side = (n as f64).sqrt().ceil() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| order_key[a].total_cmp(&order_key[b]).then(a.cmp(&b)));
    let mut grid = vec![vec![f64::NAN; side]; side];
    for (k, &node) in order.iter().enumerate() {
        grid[k / side][k % side] = values[node];
    }
    Ok(grid)
}

/// Writes a grid; `NaN` padding becomes an empty cell.
pub fn write_grid_csv(path: &Path, grid: &[Vec<f64>]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in grid {
        let cells: Vec<String> = row
            .iter()
            .map(|v| if v.is_nan() { String::new() } else { format!("{v:.16e}") })
            .collect();
        writeln!(f, "{}", cells.join(","))?;
    }
    f.flush()?;
    Ok(())
}
