use super::{EncoderKind, Model, OdeKind};
use crate::error::{Error, Result};
use crate::tensor::{Activation, Tape, Tensor, Var};
use std::rc::Rc;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RolloutOptions {
    /// RK4 steps per output interval.
    pub substeps: usize,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self { substeps: 1 }
    }
}

/// Attention matrices seen during a rollout, one `[N, N]` entry per head
/// per right-hand-side evaluation (four per RK4 step).
#[derive(Clone, Debug, Default)]
pub struct RolloutTrace {
    pub attention: Vec<Tensor>,
}

/// Model parameters registered on one tape.
pub struct Bound<'a> {
    model: &'a Model,
    vars: Vec<Var>,
}

impl<'a> Bound<'a> {
    pub(super) fn new(model: &'a Model, vars: Vec<Var>) -> Self {
        Self { model, vars }
    }

    /// Parameter handles in store order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn var(&self, name: &str) -> Var {
        let i = self
            .model
            .params
            .position(name)
            .unwrap_or_else(|| panic!("model has no parameter {name}"));
        self.vars[i]
    }

    fn act(&self) -> Activation {
        self.model.config.activation
    }

    /// `W2 act(x W1 + b1) + b2`.
    fn ffw(&self, tape: &mut Tape, prefix: &str, x: Var) -> Result<Var> {
        let h = tape.matmul(x, self.var(&format!("{prefix}.w1")))?;
        let h = tape.add_row(h, self.var(&format!("{prefix}.b1")))?;
        let h = tape.unary(h, self.act())?;
        let o = tape.matmul(h, self.var(&format!("{prefix}.w2")))?;
        tape.add_row(o, self.var(&format!("{prefix}.b2")))
    }

    /// Split first-layer projections of a pairwise block for receiver rows
    /// `recv` and sender rows `send`. With `sender_first` the block input is
    /// `[sender || receiver]`, otherwise `[receiver || sender]`.
    fn pair_inputs(&self, tape: &mut Tape, prefix: &str, recv: Var, send: Var, sender_first: bool) -> Result<(Var, Var)> {
        let (wr, ws) = if sender_first { ("w1b", "w1a") } else { ("w1a", "w1b") };
        let p = tape.matmul(recv, self.var(&format!("{prefix}.{wr}")))?;
        let p = tape.add_row(p, self.var(&format!("{prefix}.b1")))?;
        let q = tape.matmul(send, self.var(&format!("{prefix}.{ws}")))?;
        Ok((p, q))
    }

    /// `out_i = sum_j w_ij FFW([.. pair ..])`, evaluated without forming the
    /// `N^2` pair matrix: the second layer is linear, so it is applied after
    /// the weighted sum of first-layer activations.
    fn pair_sum(&self, tape: &mut Tape, prefix: &str, recv: Var, send: Var, w: Var, sender_first: bool) -> Result<Var> {
        let (p, q) = self.pair_inputs(tape, prefix, recv, send, sender_first)?;
        let agg = tape.pair_aggregate(p, q, w, self.act())?;
        let out = tape.matmul(agg, self.var(&format!("{prefix}.w2")))?;
        let n = tape.shape(w)[0];
        let rs = tape.sum_axis(w, 1)?;
        let rs = tape.reshape(rs, &[n, 1])?;
        let b2 = self.var(&format!("{prefix}.b2"));
        let width = tape.shape(b2)[0];
        let b2 = tape.reshape(b2, &[1, width])?;
        let bias = tape.matmul(rs, b2)?;
        tape.add(out, bias)
    }

    /// Static couplings `A_ij = f_edge([z_j || z_i])`, zero diagonal.
    fn edge_scores(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let (n, d) = tape.value(z).dims2()?;
        let (p, q) = self.pair_inputs(tape, "edge", z, z, true)?;
        let v = tape.reshape(self.var("edge.w2"), &[d])?;
        let s = tape.pair_score(p, q, v, self.act())?;
        let b2 = tape.reshape(self.var("edge.b2"), &[1, 1])?;
        let col = tape.constant(Tensor::full(&[n, 1], 1.0));
        let row = tape.constant(Tensor::full(&[1, n], 1.0));
        let b = tape.matmul(col, b2)?;
        let b = tape.matmul(b, row)?;
        let s = tape.add(s, b)?;
        let off = tape.constant(off_diagonal(n));
        tape.mul(s, off)
    }

    /// Row-stochastic attention `softmax_j LeakyReLU((z_j Wk) . (z_i Wq))`
    /// and the value projection.
    fn attention(&self, tape: &mut Tape, prefix: &str, h: Var, mask: Option<Rc<[bool]>>) -> Result<(Var, Var)> {
        let k = tape.matmul(h, self.var(&format!("{prefix}.wk")))?;
        let q = tape.matmul(h, self.var(&format!("{prefix}.wq")))?;
        let v = tape.matmul(h, self.var(&format!("{prefix}.wv")))?;
        let kt = tape.transpose(k)?;
        let e = tape.matmul(q, kt)?;
        let e = tape.leaky_relu(e)?;
        let a = match mask {
            Some(m) => tape.masked_softmax_rows(e, m)?,
            None => tape.softmax(e, 1)?,
        };
        Ok((a, v))
    }

    /// Latent initial state and, for static-edge models, couplings.
    pub fn encode(&self, tape: &mut Tape, x: Var) -> Result<(Var, Option<Var>)> {
        let cfg = &self.model.config;
        let (n, w) = tape.value(x).dims2()?;
        if w != cfg.input_width() {
            return Err(Error::Shape(format!(
                "observations are [{n}, {w}], model expects [N, {}] (T_obs = {}, D = {})",
                cfg.input_width(),
                cfg.t_obs,
                cfg.feature_dim
            )));
        }
        let z = match cfg.encoder {
            EncoderKind::Ffw => self.ffw(tape, "enc.node", x)?,
            EncoderKind::Nri => {
                let h = self.ffw(tape, "enc.node", x)?;
                let w = tape.constant(off_diagonal(n));
                let m = self.pair_sum(tape, "enc.edge", h, h, w, true)?;
                self.ffw(tape, "enc.e2n", m)?
            }
            EncoderKind::Gt => {
                let h = self.ffw(tape, "enc.node", x)?;
                let (a, v) = self.attention(tape, "enc.attn", h, None)?;
                let msg = tape.matmul(a, v)?;
                let msg = tape.unary(msg, self.act())?;
                tape.add(h, msg)?
            }
            EncoderKind::GtDg => {
                let t_obs = cfg.t_obs;
                let nodes = tape.constant(observation_nodes(tape.value(x), t_obs, cfg.feature_dim)?);
                let h = self.ffw(tape, "enc.node", nodes)?;
                let mask: Rc<[bool]> = dynamic_graph_mask(n, t_obs).into();
                let (a, v) = self.attention(tape, "enc.attn", h, Some(mask))?;
                let msg = tape.matmul(a, v)?;
                let msg = tape.unary(msg, self.act())?;
                let all = tape.add(h, msg)?;
                tape.slice(all, 0, (t_obs - 1) * n, n)?
            }
        };
        let edges = match cfg.ode_type {
            OdeKind::StaticEdge => Some(self.edge_scores(tape, z)?),
            _ => None,
        };
        Ok((z, edges))
    }

    /// Latent right-hand side `dz/dt` for state `z` (`[N, d]`).
    pub fn latent_rhs(
        &self,
        tape: &mut Tape,
        z: Var,
        edges: Option<Var>,
        trace: Option<&mut RolloutTrace>,
    ) -> Result<Var> {
        let cfg = &self.model.config;
        let f = self.ffw(tape, "ode.f", z)?;
        let w_out = self.var("ode.out.w");
        let proj = match cfg.ode_type {
            OdeKind::SelfOnly => tape.matmul(f, w_out)?,
            OdeKind::StaticEdge => {
                let a = edges.ok_or_else(|| Error::Contract("static-edge ODE needs couplings".into()))?;
                let inter = self.pair_sum(tape, "ode.g", z, z, a, false)?;
                let s = tape.add(f, inter)?;
                tape.matmul(s, w_out)?
            }
            OdeKind::AttentionEdge => {
                let mut heads = Vec::with_capacity(cfg.n_heads);
                let mut trace = trace;
                for h in 0..cfg.n_heads {
                    let (a, v) = self.attention(tape, &format!("ode.head{h}"), z, None)?;
                    if let Some(t) = trace.as_deref_mut() {
                        t.attention.push(tape.value(a).clone());
                    }
                    heads.push(self.pair_sum(tape, "ode.g", z, v, a, false)?);
                }
                let cat = tape.concat(&heads, 1)?;
                let p = tape.matmul(cat, w_out)?;
                tape.add(p, f)?
            }
        };
        let out = tape.add_row(proj, self.var("ode.out.b"))?;
        if cfg.outer_tanh {
            tape.tanh(out)
        } else {
            Ok(out)
        }
    }

    /// Classical RK4 from `z0`; returns the state after each of `n_steps`
    /// intervals of length `dt`.
    #[allow(clippy::too_many_arguments)]
    pub fn rollout(
        &self,
        tape: &mut Tape,
        z0: Var,
        edges: Option<Var>,
        n_steps: usize,
        dt: f64,
        opts: &RolloutOptions,
        trace: Option<&mut RolloutTrace>,
    ) -> Result<Vec<Var>> {
        self.rollout_from(tape, z0, edges, 0, n_steps, dt, opts, trace)
    }

    /// As [`Bound::rollout`], numbering steps from `first_step` in errors.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn rollout_from(
        &self,
        tape: &mut Tape,
        z0: Var,
        edges: Option<Var>,
        first_step: usize,
        n_steps: usize,
        dt: f64,
        opts: &RolloutOptions,
        mut trace: Option<&mut RolloutTrace>,
    ) -> Result<Vec<Var>> {
        if !(dt > 0.0) || opts.substeps == 0 {
            return Err(Error::Parameter(format!(
                "rollout needs dt > 0 and substeps >= 1 (dt = {dt}, substeps = {})",
                opts.substeps
            )));
        }
        let h = dt / opts.substeps as f64;
        let mut z = z0;
        let mut out = Vec::with_capacity(n_steps);
        for step in 0..n_steps {
            for _ in 0..opts.substeps {
                z = self
                    .rk4_step(tape, z, edges, h, trace.as_deref_mut())
                    .map_err(|e| match e {
                        Error::Numeric(m) => Error::Numeric(format!("rollout step {}: {m}", first_step + step)),
                        other => other,
                    })?;
            }
            out.push(z);
        }
        Ok(out)
    }

    fn rk4_step(
        &self,
        tape: &mut Tape,
        z: Var,
        edges: Option<Var>,
        h: f64,
        mut trace: Option<&mut RolloutTrace>,
    ) -> Result<Var> {
        let k1 = self.latent_rhs(tape, z, edges, trace.as_deref_mut())?;
        let s = tape.scale(k1, 0.5 * h)?;
        let z2 = tape.add(z, s)?;
        let k2 = self.latent_rhs(tape, z2, edges, trace.as_deref_mut())?;
        let s = tape.scale(k2, 0.5 * h)?;
        let z3 = tape.add(z, s)?;
        let k3 = self.latent_rhs(tape, z3, edges, trace.as_deref_mut())?;
        let s = tape.scale(k3, h)?;
        let z4 = tape.add(z, s)?;
        let k4 = self.latent_rhs(tape, z4, edges, trace)?;
        let k23 = tape.add(k2, k3)?;
        let k23 = tape.scale(k23, 2.0)?;
        let sum = tape.add(k1, k23)?;
        let sum = tape.add(sum, k4)?;
        let inc = tape.scale(sum, h / 6.0)?;
        tape.add(z, inc)
    }

    /// Per-node decoder to the observation space.
    pub fn decode(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        self.ffw(tape, "dec", z)
    }
}

fn off_diagonal(n: usize) -> Tensor {
    let mut t = Tensor::full(&[n, n], 1.0);
    for i in 0..n {
        t.data_mut()[i * n + i] = 0.0;
    }
    t
}

/// Rows `t * N + i` hold `[x_i^t || t / T_obs]`.
fn observation_nodes(obs: &Tensor, t_obs: usize, dim: usize) -> Result<Tensor> {
    let (n, _) = obs.dims2()?;
    let mut out = Vec::with_capacity(n * t_obs * (dim + 1));
    for t in 0..t_obs {
        for i in 0..n {
            out.extend_from_slice(&obs.row(i)[t * dim..(t + 1) * dim]);
            out.push(t as f64 / t_obs as f64);
        }
    }
    Tensor::matrix(n * t_obs, dim + 1, out)
}

/// Receiver `(t2, i)` sees sender `(t1, j)` when `i != j, t1 == t2`, when
/// `i == j, t1 < t2`, or when it is itself.
pub(crate) fn dynamic_graph_mask(n: usize, t_obs: usize) -> Vec<bool> {
    let m = n * t_obs;
    let mut mask = vec![false; m * m];
    for t2 in 0..t_obs {
        for i in 0..n {
            let r = t2 * n + i;
            for t1 in 0..t_obs {
                for j in 0..n {
                    let s = t1 * n + j;
                    mask[r * m + s] = (i != j && t1 == t2) || (i == j && t1 <= t2);
                }
            }
        }
    }
    mask
}

/// Mean squared error over every step, node and feature.
pub(crate) fn mse_loss(tape: &mut Tape, preds: &[Var], targets: &[Tensor]) -> Result<Var> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::Shape(format!(
            "{} predicted steps vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let mut total: Option<Var> = None;
    let mut count = 0;
    for (p, t) in preds.iter().zip(targets) {
        let tv = tape.constant(t.clone());
        let d = tape.sub(*p, tv)?;
        let sq = tape.mul(d, d)?;
        let s = tape.sum_all(sq)?;
        count += t.len();
        total = Some(match total {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    tape.scale(total.expect("nonempty"), 1.0 / count as f64)
}

pub(crate) fn mse(preds: &[Tensor], targets: &[Tensor]) -> Result<f64> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::Shape("prediction and target lengths differ".into()));
    }
    let mut s = 0.0;
    let mut count = 0;
    for (p, t) in preds.iter().zip(targets) {
        if p.shape() != t.shape() {
            return Err(Error::Shape(format!("{:?} vs {:?}", p.shape(), t.shape())));
        }
        s += p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += t.len();
    }
    Ok(s / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dynamic_mask_structure() {
        let m = dynamic_graph_mask(2, 2);
        // receiver (t=1, i=0) = row 2: sees (0,0) earlier self, (1,1) peer, itself.
        assert_eq!(&m[8..12], &[true, false, true, true]);
        // receiver (t=0, i=1) = row 1: sees (0,0) peer and itself only.
        assert_eq!(&m[4..8], &[true, true, false, false]);
    }

    #[test]
    fn observation_node_layout() {
        let obs = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let o = observation_nodes(&obs, 2, 1).unwrap();
        assert_eq!(o.data(), &[1.0, 0.0, 3.0, 0.0, 2.0, 0.5, 4.0, 0.5]);
    }

    #[test]
    fn constant_offset_loss() {
        let p = vec![Tensor::full(&[2, 1], 1.5)];
        let t = vec![Tensor::full(&[2, 1], 1.0)];
        assert_eq!(mse(&p, &t).unwrap(), 0.25);
    }
}
