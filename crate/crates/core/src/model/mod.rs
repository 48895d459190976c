//! Latent graph ODE forecaster.
//!
//! Each node's observed history is encoded into a latent vector, the
//! latent vectors evolve under a learned coupled ODE, and every latent state
//! is decoded back to the observation space independently. Interactions are
//! inferred from the latent states themselves, so no adjacency matrix is
//! ever needed and the parameter count does not depend on the node count.

mod net;

pub use net::{Bound, RolloutOptions, RolloutTrace};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Activation, ParamStore, Tape, Tensor, Var};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const CONFIG_FILE: &str = "model_config.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EncoderKind {
    #[serde(rename = "FFW", alias = "ffw")]
    Ffw,
    #[serde(rename = "NRI", alias = "nri")]
    Nri,
    #[serde(rename = "GT", alias = "gt")]
    Gt,
    #[serde(rename = "GT-DG", alias = "gt-dg", alias = "GTDG")]
    GtDg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OdeKind {
    /// Fixed latent edges from the encoder.
    #[serde(rename = "StaticEdge", alias = "static")]
    StaticEdge,
    /// Multi-head attention edges recomputed from the current latent state.
    #[serde(rename = "AttentionEdge", alias = "attention")]
    AttentionEdge,
    /// Self-dynamics only; no interaction term.
    #[serde(rename = "SelfOnly", alias = "self_only", alias = "NODE")]
    SelfOnly,
}

impl OdeKind {
    /// Display name of the model built on this ODE.
    pub fn model_name(self) -> &'static str {
        match self {
            OdeKind::StaticEdge => "TAGODE",
            OdeKind::AttentionEdge => "TAGODE-VE",
            OdeKind::SelfOnly => "NODE",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub n_heads: usize,
    pub encoder: EncoderKind,
    pub ode_type: OdeKind,
    pub t_obs: usize,
    pub feature_dim: usize,
    pub activation: Activation,
    /// Apply `tanh` after the outer affine map of the latent right-hand side.
    pub outer_tanh: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            n_heads: 3,
            encoder: EncoderKind::Ffw,
            ode_type: OdeKind::StaticEdge,
            t_obs: 25,
            feature_dim: 1,
            activation: Activation::Gelu,
            outer_tanh: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.n_heads == 0 || self.t_obs == 0 || self.feature_dim == 0 {
            return Err(Error::Config(format!(
                "model needs latent_dim, n_heads, t_obs, feature_dim >= 1 (got {}, {}, {}, {})",
                self.latent_dim, self.n_heads, self.t_obs, self.feature_dim
            )));
        }
        Ok(())
    }

    /// Width of the flattened per-node observation window.
    pub fn input_width(&self) -> usize {
        self.t_obs * self.feature_dim
    }

    /// Ordered `(name, shape, fan_in)` of every learnable tensor.
    fn layout(&self) -> Vec<(String, Vec<usize>, usize)> {
        let d = self.latent_dim;
        let mut out = Vec::new();
        let ffw = |out: &mut Vec<_>, name: &str, input: usize, output: usize| {
            out.push((format!("{name}.w1"), vec![input, d], input));
            out.push((format!("{name}.b1"), vec![d], input));
            out.push((format!("{name}.w2"), vec![d, output], d));
            out.push((format!("{name}.b2"), vec![output], d));
        };
        let pair = |out: &mut Vec<(String, Vec<usize>, usize)>, name: &str, output: usize| {
            out.push((format!("{name}.w1a"), vec![d, d], 2 * d));
            out.push((format!("{name}.w1b"), vec![d, d], 2 * d));
            out.push((format!("{name}.b1"), vec![d], 2 * d));
            out.push((format!("{name}.w2"), vec![d, output], d));
            out.push((format!("{name}.b2"), vec![output], d));
        };
        let attn = |out: &mut Vec<(String, Vec<usize>, usize)>, name: &str| {
            for m in ["wk", "wq", "wv"] {
                out.push((format!("{name}.{m}"), vec![d, d], d));
            }
        };
        match self.encoder {
            EncoderKind::Ffw => ffw(&mut out, "enc.node", self.input_width(), d),
            EncoderKind::Nri => {
                ffw(&mut out, "enc.node", self.input_width(), d);
                pair(&mut out, "enc.edge", d);
                ffw(&mut out, "enc.e2n", d, d);
            }
            EncoderKind::Gt => {
                ffw(&mut out, "enc.node", self.input_width(), d);
                attn(&mut out, "enc.attn");
            }
            EncoderKind::GtDg => {
                // One observation-node per (node, timestamp): features plus time.
                ffw(&mut out, "enc.node", self.feature_dim + 1, d);
                attn(&mut out, "enc.attn");
            }
        }
        if self.ode_type == OdeKind::StaticEdge {
            pair(&mut out, "edge", 1);
        }
        ffw(&mut out, "ode.f", d, d);
        let proj_in = match self.ode_type {
            OdeKind::AttentionEdge => {
                pair(&mut out, "ode.g", d);
                for h in 0..self.n_heads {
                    attn(&mut out, &format!("ode.head{h}"));
                }
                self.n_heads * d
            }
            OdeKind::StaticEdge => {
                pair(&mut out, "ode.g", d);
                d
            }
            OdeKind::SelfOnly => d,
        };
        out.push(("ode.out.w".into(), vec![proj_in, d], proj_in));
        out.push(("ode.out.b".into(), vec![d], proj_in));
        ffw(&mut out, "dec", d, self.feature_dim);
        out
    }
}

/// A configured model with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
}

impl Model {
    /// Fresh parameters, uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, 10);
        let mut params = ParamStore::new();
        for (name, shape, fan_in) in config.layout() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            params.insert(name, Tensor::new(shape, data)?)?;
        }
        Ok(Self { config, params })
    }

    /// Wraps existing parameters after checking them against the layout.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != params.len()
            || layout
                .iter()
                .zip(params.names().iter().zip(params.tensors()))
                .any(|((n, s, _), (pn, pt))| n != pn || s.as_slice() != pt.shape())
        {
            return Err(Error::Config(
                "checkpoint parameters do not match the model configuration".into(),
            ));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn n_parameters(&self) -> usize {
        self.params.count()
    }

    /// Registers the parameters on `tape` (trainable or frozen).
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound<'_> {
        let vars = if trainable {
            self.params.register(tape)
        } else {
            self.params.register_frozen(tape)
        };
        Bound::new(self, vars)
    }

    /// Full differentiable forward pass: observation window `[N, T_obs * D]`
    /// to `n_steps` decoded `[N, D]` predictions, spaced `dt` apart.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound<'_>,
        obs: &Tensor,
        n_steps: usize,
        dt: f64,
        opts: &RolloutOptions,
    ) -> Result<Vec<Var>> {
        let x = tape.constant(obs.clone());
        let (z0, edges) = bound.encode(tape, x)?;
        let zs = bound.rollout(tape, z0, edges, n_steps, dt, opts, None)?;
        zs.into_iter().map(|z| bound.decode(tape, z)).collect()
    }

    /// Mean squared error of the forecast over all steps, nodes and features,
    /// and its gradient with respect to every parameter (store order).
    pub fn loss_and_grad(&self, obs: &Tensor, targets: &[Tensor], dt: f64) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, true);
        let preds = self.forward(&mut tape, &bound, obs, targets.len(), dt, &RolloutOptions::default())?;
        let loss = net::mse_loss(&mut tape, &preds, targets)?;
        let value = tape.value(loss).item()?;
        let grads = tape.backward(loss)?;
        Ok((value, bound.vars().iter().map(|v| grads.get_or_zeros(*v)).collect()))
    }

    /// Loss only, no tape retained beyond the call.
    pub fn loss(&self, obs: &Tensor, targets: &[Tensor], dt: f64) -> Result<f64> {
        let preds = self.predict(obs, targets.len(), dt)?;
        net::mse(&preds, targets)
    }

    /// Inference: `n_steps` decoded `[N, D]` states. Memory stays bounded in
    /// the number of steps because each RK4 step gets a fresh tape.
    pub fn predict(&self, obs: &Tensor, n_steps: usize, dt: f64) -> Result<Vec<Tensor>> {
        self.predict_with(obs, n_steps, dt, &RolloutOptions::default(), None)
    }

    pub fn predict_with(
        &self,
        obs: &Tensor,
        n_steps: usize,
        dt: f64,
        opts: &RolloutOptions,
        trace: Option<&mut RolloutTrace>,
    ) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(n_steps);
        self.stepwise(obs, n_steps, dt, opts, trace, |tape, bound, z| {
            let x = bound.decode(tape, z)?;
            out.push(tape.value(x).clone());
            Ok(())
        })?;
        Ok(out)
    }

    /// Latent states `[N, d]` after each of `n_steps` intervals.
    pub fn latent_trajectory(
        &self,
        obs: &Tensor,
        n_steps: usize,
        dt: f64,
        opts: &RolloutOptions,
        trace: Option<&mut RolloutTrace>,
    ) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(n_steps);
        self.stepwise(obs, n_steps, dt, opts, trace, |tape, _, z| {
            out.push(tape.value(z).clone());
            Ok(())
        })?;
        Ok(out)
    }

    fn stepwise(
        &self,
        obs: &Tensor,
        n_steps: usize,
        dt: f64,
        opts: &RolloutOptions,
        mut trace: Option<&mut RolloutTrace>,
        mut sink: impl FnMut(&mut Tape, &Bound<'_>, Var) -> Result<()>,
    ) -> Result<()> {
        let (z0, edges) = self.encode_values(obs)?;
        let mut z = z0;
        for step in 0..n_steps {
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape, false);
            let zv = tape.constant(z);
            let ev = edges.as_ref().map(|e| tape.constant(e.clone()));
            let next = bound.rollout_from(&mut tape, zv, ev, step, 1, dt, opts, trace.as_deref_mut())?;
            sink(&mut tape, &bound, next[0])?;
            z = tape.value(next[0]).clone();
        }
        Ok(())
    }

    /// Latent initial state `[N, d]` and, for static-edge models, the
    /// inferred coupling matrix `[N, N]`.
    pub fn encode_values(&self, obs: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(obs.clone());
        let (z0, edges) = bound.encode(&mut tape, x)?;
        Ok((
            tape.value(z0).clone(),
            edges.map(|e| tape.value(e).clone()),
        ))
    }

    /// Writes `params.json`, `params.bin` and `model_config.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.params.save(dir)?;
        fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(&self.config)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(CONFIG_FILE))?;
        let config: ModelConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{CONFIG_FILE}: {e}")))?;
        Self::from_parts(config, ParamStore::load(dir)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(encoder: EncoderKind, ode_type: OdeKind) -> ModelConfig {
        ModelConfig {
            latent_dim: 4,
            n_heads: 2,
            encoder,
            ode_type,
            t_obs: 3,
            ..Default::default()
        }
    }

    fn obs(n: usize, w: usize, seed: u64) -> Tensor {
        let mut r = rng::stream(seed, 0);
        Tensor::matrix(n, w, (0..n * w).map(|_| r.random_range(0.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn parameter_count_ignores_node_count() {
        let m = Model::new(cfg(EncoderKind::Nri, OdeKind::AttentionEdge), 1).unwrap();
        for n in [1, 2, 7] {
            let p = m.predict(&obs(n, 3, 2), 2, 0.1).unwrap();
            assert_eq!(p.len(), 2);
            assert_eq!(p[0].shape(), &[n, 1]);
        }
    }

    #[test]
    fn all_variants_run() {
        for enc in [EncoderKind::Ffw, EncoderKind::Nri, EncoderKind::Gt, EncoderKind::GtDg] {
            for ode in [OdeKind::StaticEdge, OdeKind::AttentionEdge, OdeKind::SelfOnly] {
                let m = Model::new(cfg(enc, ode), 3).unwrap();
                let (z0, e) = m.encode_values(&obs(5, 3, 4)).unwrap();
                assert_eq!(z0.shape(), &[5, 4]);
                assert_eq!(e.is_some(), ode == OdeKind::StaticEdge);
                let p = m.predict(&obs(5, 3, 4), 3, 0.05).unwrap();
                assert!(p.iter().all(Tensor::is_finite));
            }
        }
    }

    #[test]
    fn inference_matches_training_forward() {
        for ode in [OdeKind::StaticEdge, OdeKind::AttentionEdge] {
            let m = Model::new(cfg(EncoderKind::Ffw, ode), 5).unwrap();
            let x = obs(4, 3, 6);
            let fast = m.predict(&x, 4, 0.1).unwrap();
            let mut tape = Tape::new();
            let b = m.bind(&mut tape, true);
            let slow = m.forward(&mut tape, &b, &x, 4, 0.1, &Default::default()).unwrap();
            for (a, v) in fast.iter().zip(slow) {
                assert_eq!(a, tape.value(v));
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Model::new(cfg(EncoderKind::Gt, OdeKind::StaticEdge), 9).unwrap();
        m.save(dir.path()).unwrap();
        assert_eq!(Model::load(dir.path()).unwrap(), m);
    }

    #[test]
    fn mismatched_checkpoint_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        Model::new(cfg(EncoderKind::Ffw, OdeKind::StaticEdge), 9).unwrap().save(dir.path()).unwrap();
        let other = cfg(EncoderKind::Ffw, OdeKind::SelfOnly);
        let store = ParamStore::load(dir.path()).unwrap();
        assert!(matches!(Model::from_parts(other, store), Err(Error::Config(_))));
    }
}
