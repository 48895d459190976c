//! Optimisation and evaluation.

use crate::dynamics::TrajectorySet;
use crate::error::{Error, Result};
use crate::metrics::{CurveAccumulator, ErrorCurves, MetricAccumulator};
use crate::model::{Model, ModelConfig};
use crate::rng;
use crate::tensor::{ParamStore, Tensor};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_min: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm threshold; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    /// Evaluation results are collected in input order either way; this
    /// additionally pins evaluation to a single worker.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.01,
            lr_min: 0.0,
            epochs: 80,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            grad_clip: 5.0,
            seed: 0,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) || self.epochs == 0 || !(self.lr_min >= 0.0) || self.lr_min > self.lr0 {
            return Err(Error::Config(format!(
                "need lr0 > 0, 0 <= lr_min <= lr0 and epochs >= 1 (lr0 = {}, lr_min = {}, epochs = {})",
                self.lr0, self.lr_min, self.epochs
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("AdamW betas must lie in [0, 1) and eps > 0".into()));
        }
        if !(self.grad_clip >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("grad_clip and weight_decay must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Cosine annealing `lr_min + (lr0 - lr_min)(1 + cos(pi e / epochs)) / 2`.
/// Epoch `e` runs at `cosine_lr(e)`; `cosine_lr(epochs) == lr_min`.
pub fn cosine_lr(cfg: &TrainConfig, epoch: usize) -> f64 {
    let e = epoch.min(cfg.epochs) as f64;
    cfg.lr_min + (cfg.lr0 - cfg.lr_min) * (1.0 + (std::f64::consts::PI * e / cfg.epochs as f64).cos()) / 2.0
}

/// Scales `grads` in place so their joint Euclidean norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

/// AdamW with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl AdamW {
    pub fn new(cfg: &TrainConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let decay = 1.0 - lr * self.weight_decay;
        for (k, (p, g)) in params.tensors_mut().iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (theta, gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *theta *= decay;
                *theta -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// One supervised example: a condition window and the states that follow.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[N, T_obs * D]`.
    pub obs: Tensor,
    /// Prediction targets, `[N, D]` per step.
    pub targets: Vec<Tensor>,
    /// Spacing of the prediction steps.
    pub dt: f64,
}

impl Sample {
    /// Condition on `start .. start + t_obs`, predict the next `n_pred` steps.
    pub fn from_window(traj: &TrajectorySet, id: impl Into<String>, start: usize, t_obs: usize, n_pred: usize) -> Result<Self> {
        let end = start + t_obs + n_pred;
        if t_obs == 0 || n_pred == 0 || end > traj.n_times() {
            return Err(Error::Config(format!(
                "window {start}..{end} (T_obs = {t_obs}, prediction = {n_pred}) exceeds T = {}",
                traj.n_times()
            )));
        }
        let times = traj.times();
        let last = start + t_obs - 1;
        let dt = times[last + 1] - times[last];
        if !(dt > 0.0) {
            return Err(Error::Config("timestamps must be increasing".into()));
        }
        Ok(Self {
            id: id.into(),
            obs: traj.node_history(start, t_obs)?,
            targets: traj.states(start + t_obs, n_pred),
            dt,
        })
    }

    /// Full-trajectory protocol: condition on the first `t_obs` steps and
    /// predict every remaining one.
    pub fn from_trajectory(traj: &TrajectorySet, id: impl Into<String>, t_obs: usize) -> Result<Self> {
        if traj.n_times() <= t_obs {
            return Err(Error::Config(format!(
                "trajectory has T = {} but T_obs = {t_obs}",
                traj.n_times()
            )));
        }
        Self::from_window(traj, id, 0, t_obs, traj.n_times() - t_obs)
    }

    pub fn n_nodes(&self) -> usize {
        self.obs.shape()[0]
    }

    /// Repeats the last observed value over the prediction window.
    pub fn persistence(&self) -> Vec<Tensor> {
        let n = self.n_nodes();
        let d = self.targets[0].shape()[1];
        let w = self.obs.shape()[1];
        let mut last = Vec::with_capacity(n * d);
        for i in 0..n {
            last.extend_from_slice(&self.obs.row(i)[w - d..]);
        }
        let last = Tensor::matrix(n, d, last).expect("consistent shape");
        vec![last; self.targets.len()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// `None` without validation data.
    pub val_loss: Option<f64>,
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "lr", "train_loss", "val_loss"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            format!("{:.16e}", r.lr),
            format!("{:.16e}", r.train_loss),
            r.val_loss.map(|v| format!("{v:.16e}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Trains a fresh model. Every optimiser step uses one whole sample (all
/// nodes, full prediction window); samples are visited in a seeded shuffle.
pub fn train(
    model_cfg: &ModelConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<(Model, Vec<EpochRecord>)> {
    let model = Model::new(model_cfg.clone(), rng::derive_seed(cfg.seed, 0, 20))?;
    train_from(model, train_set, val_set, cfg)
}

/// Continues training `model` in place of a fresh initialisation.
pub fn train_from(
    mut model: Model,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<(Model, Vec<EpochRecord>)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut opt = AdamW::new(cfg, model.params());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = rng::stream(cfg.seed, 21);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(cfg, epoch);
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (step, &k) in order.iter().enumerate() {
            let s = &train_set[k];
            let (loss, mut grads) = model
                .loss_and_grad(&s.obs, &s.targets, s.dt)
                .map_err(|e| numeric_context(e, epoch, step, &s.id))?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "epoch {epoch} step {step} ({}): loss is {loss}",
                    s.id
                )));
            }
            clip_global_norm(&mut grads, cfg.grad_clip);
            opt.step(model.params_mut(), &grads, lr)?;
            total += loss;
        }
        let train_loss = total / train_set.len() as f64;
        let val_loss = if val_set.is_empty() {
            None
        } else {
            Some(mean_loss(&model, val_set, cfg.deterministic)?)
        };
        log::info!(
            "epoch {epoch:>3} lr {lr:.3e} train {train_loss:.4e} val {}",
            val_loss.map(|v| format!("{v:.4e}")).unwrap_or_else(|| "-".into())
        );
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
        });
    }
    Ok((model, history))
}

fn numeric_context(e: Error, epoch: usize, step: usize, id: &str) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("epoch {epoch} step {step} ({id}): {m}")),
        other => other,
    }
}

/// Runs `f` over `items` in parallel, results in input order.
pub fn ordered_map<T: Sync, R: Send>(
    items: &[T],
    single_thread: bool,
    f: impl Fn(&T) -> Result<R> + Sync + Send,
) -> Result<Vec<R>> {
    if single_thread {
        items.iter().map(f).collect()
    } else {
        items.par_iter().map(f).collect()
    }
}

fn mean_loss(model: &Model, set: &[Sample], single_thread: bool) -> Result<f64> {
    let losses = ordered_map(set, single_thread, |s| model.loss(&s.obs, &s.targets, s.dt))?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub id: String,
    pub mape: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mape_mean: Option<f64>,
    pub mape_std: Option<f64>,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    /// Pooled over every entry of every trajectory.
    pub mape_pooled: Option<f64>,
    pub mae_pooled: f64,
    pub rmse_pooled: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_trajectory: Vec<TrajectoryMetrics>,
    pub aggregate: Aggregate,
    pub per_timestamp: ErrorCurves,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn flatten(ts: &[Tensor]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

/// Metrics of given predictions against each sample's targets.
pub fn report_from_predictions(samples: &[Sample], preds: &[Vec<Tensor>]) -> Result<EvalReport> {
    if samples.is_empty() || samples.len() != preds.len() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let mut rows = Vec::with_capacity(samples.len());
    let mut pooled = MetricAccumulator::default();
    let mut curves = CurveAccumulator::default();
    for (s, p) in samples.iter().zip(preds) {
        let (pf, tf) = (flatten(p), flatten(&s.targets));
        let mut one = MetricAccumulator::default();
        one.push(&pf, &tf)?;
        pooled.push(&pf, &tf)?;
        let r = one.report()?;
        rows.push(TrajectoryMetrics {
            id: s.id.clone(),
            mape: r.mape,
            mae: r.mae,
            rmse: r.rmse,
        });
        let pt: Vec<Vec<f64>> = p.iter().map(|t| t.data().to_vec()).collect();
        let tt: Vec<Vec<f64>> = s.targets.iter().map(|t| t.data().to_vec()).collect();
        curves.push(&pt, &tt)?;
    }
    let mapes: Option<Vec<f64>> = rows.iter().map(|r| r.mape).collect();
    let (mae_mean, mae_std) = mean_std(&rows.iter().map(|r| r.mae).collect::<Vec<_>>());
    let (rmse_mean, rmse_std) = mean_std(&rows.iter().map(|r| r.rmse).collect::<Vec<_>>());
    let mape_ms = mapes.map(|m| mean_std(&m));
    let p = pooled.report()?;
    Ok(EvalReport {
        per_trajectory: rows,
        aggregate: Aggregate {
            mape_mean: mape_ms.map(|x| x.0),
            mape_std: mape_ms.map(|x| x.1),
            mae_mean,
            mae_std,
            rmse_mean,
            rmse_std,
            mape_pooled: p.mape,
            mae_pooled: p.mae,
            rmse_pooled: p.rmse,
        },
        per_timestamp: curves.curves()?,
    })
}

/// Predicts every sample (in parallel unless `single_thread`).
pub fn predict_all(model: &Model, samples: &[Sample], single_thread: bool) -> Result<Vec<Vec<Tensor>>> {
    ordered_map(samples, single_thread, |s| model.predict(&s.obs, s.targets.len(), s.dt))
}

pub fn evaluate(model: &Model, samples: &[Sample], single_thread: bool) -> Result<EvalReport> {
    let preds = predict_all(model, samples, single_thread)?;
    report_from_predictions(samples, &preds)
}

pub fn evaluate_persistence(samples: &[Sample]) -> Result<EvalReport> {
    let preds: Vec<Vec<Tensor>> = samples.iter().map(Sample::persistence).collect();
    report_from_predictions(samples, &preds)
}

/// Chronological windows of one long series.
#[derive(Clone, Debug)]
pub struct TransductiveSplit {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Training windows lie entirely before `split` (start + L <= split, so
/// there are `split - L + 1` of them at stride 1); test windows start at or
/// after `split`. `L = t_obs + t_pred`.
pub fn transductive_windows(series: &TrajectorySet, t_obs: usize, t_pred: usize, split: usize) -> Result<TransductiveSplit> {
    let len = t_obs + t_pred;
    let t = series.n_times();
    if t < len {
        return Err(Error::Config(format!(
            "series has {t} timestamps, a window needs T_obs + T_pred = {len}"
        )));
    }
    if split < len || split > t {
        return Err(Error::Config(format!(
            "split index {split} leaves no full training window of length {len} (T = {t})"
        )));
    }
    let train = (0..=split - len)
        .map(|s| Sample::from_window(series, format!("train_{s}"), s, t_obs, t_pred))
        .collect::<Result<Vec<_>>>()?;
    let test = if split + len <= t {
        (split..=t - len)
            .map(|s| Sample::from_window(series, format!("test_{s}"), s, t_obs, t_pred))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    if test.is_empty() {
        return Err(Error::Config(format!(
            "no test window of length {len} starts at or after split {split} (T = {t})"
        )));
    }
    Ok(TransductiveSplit { train, test })
}
