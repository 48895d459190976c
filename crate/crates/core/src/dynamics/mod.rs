//! Ground-truth networked dynamics.
//!
//! Every family has the coupled form
//! `dx_i/dt = f_i(x_i) + sum_j A_ij g(x_i, x_j)` with scalar nodal states.
//! Fractional powers are evaluated on `max(x, 0)` so the right-hand side
//! stays real when an adaptive step transiently overshoots below zero.

mod dopri;
mod trajectory;

pub use dopri::{solve_on_grid, DopriOptions, DopriStats};
pub use trajectory::TrajectorySet;

use crate::error::{Error, Result};
use crate::graph::{self, WeightedGraph};
use crate::linalg;
use crate::rng;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DynamicsFamily {
    #[serde(rename = "SIS", alias = "sis")]
    Sis,
    #[serde(alias = "population")]
    Population,
    #[serde(alias = "regulatory")]
    Regulatory,
    #[serde(alias = "mutualistic")]
    Mutualistic,
    #[serde(alias = "neural")]
    Neural,
    #[serde(rename = "LV", alias = "LotkaVolterra", alias = "lv")]
    LotkaVolterra,
}

impl DynamicsFamily {
    pub const ALL: [DynamicsFamily; 6] = [
        DynamicsFamily::Sis,
        DynamicsFamily::Population,
        DynamicsFamily::Regulatory,
        DynamicsFamily::Mutualistic,
        DynamicsFamily::Neural,
        DynamicsFamily::LotkaVolterra,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DynamicsFamily::Sis => "SIS",
            DynamicsFamily::Population => "Population",
            DynamicsFamily::Regulatory => "Regulatory",
            DynamicsFamily::Mutualistic => "Mutualistic",
            DynamicsFamily::Neural => "Neural",
            DynamicsFamily::LotkaVolterra => "LV",
        }
    }

    pub fn default_t_final(self) -> f64 {
        match self {
            DynamicsFamily::Mutualistic => 2.0,
            _ => 5.0,
        }
    }

    /// Every family except Lotka-Volterra has `dg/dx_j >= 0`.
    pub fn is_cooperative(self) -> bool {
        self != DynamicsFamily::LotkaVolterra
    }
}

/// Scalar constants shared by all nodes; overridable from configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsConstants {
    /// Population: `-B x^b + sum A x_j^a`.
    pub population_b_coef: f64,
    pub population_b_exp: f64,
    pub population_a_exp: f64,
    /// Regulatory: `-B x^f + sum A x_j^h / (1 + x_j^h)`.
    pub regulatory_b: f64,
    pub regulatory_f: f64,
    pub regulatory_h: f64,
    /// Mutualistic: `B x (1 - x^a / C) + sum A x alpha x_j^h / (1 + alpha x_j^h)`.
    pub mutualistic_alpha: f64,
    pub mutualistic_b: f64,
    pub mutualistic_c: f64,
    pub mutualistic_a: f64,
    pub mutualistic_h: f64,
    /// Neural: `-x + sum A / (1 + exp(-tau (x_j - mu)))`.
    pub neural_tau: f64,
    pub neural_mu: f64,
    /// Uniform range of the Lotka-Volterra `alpha_i`, `theta_i`.
    pub lv_range: [f64; 2],
    /// Uniform range of the SIS base recovery rates before rescaling.
    pub sis_delta_range: [f64; 2],
    /// Target basic reproduction number for SIS.
    pub sis_r0: f64,
}

impl Default for DynamicsConstants {
    fn default() -> Self {
        Self {
            population_b_coef: 1.0,
            population_b_exp: 0.5,
            population_a_exp: 0.2,
            regulatory_b: 1.0,
            regulatory_f: 1.0,
            regulatory_h: 2.0,
            mutualistic_alpha: 1.0,
            mutualistic_b: 1.0,
            mutualistic_c: 1.0,
            mutualistic_a: 2.0,
            mutualistic_h: 1.0,
            neural_tau: 1.0,
            neural_mu: 3.0,
            lv_range: [0.5, 1.5],
            sis_delta_range: [0.5, 1.5],
            sis_r0: 1.5,
        }
    }
}

/// Resolved per-family parameters of one system instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum DynamicsParams {
    #[serde(rename = "SIS")]
    Sis { delta: Vec<f64> },
    Population { b_coef: f64, b_exp: f64, a_exp: f64 },
    Regulatory { b: f64, f: f64, h: f64 },
    Mutualistic { alpha: f64, b: f64, c: f64, a: f64, h: f64 },
    Neural { tau: f64, mu: f64 },
    #[serde(rename = "LV")]
    LotkaVolterra { alpha: Vec<f64>, theta: Vec<f64> },
}

impl DynamicsParams {
    pub fn family(&self) -> DynamicsFamily {
        match self {
            DynamicsParams::Sis { .. } => DynamicsFamily::Sis,
            DynamicsParams::Population { .. } => DynamicsFamily::Population,
            DynamicsParams::Regulatory { .. } => DynamicsFamily::Regulatory,
            DynamicsParams::Mutualistic { .. } => DynamicsFamily::Mutualistic,
            DynamicsParams::Neural { .. } => DynamicsFamily::Neural,
            DynamicsParams::LotkaVolterra { .. } => DynamicsFamily::LotkaVolterra,
        }
    }

    /// Parameters with scalar constants only (no per-node draws). SIS and LV
    /// need a graph and seed; see [`sample_params`].
    pub fn from_constants(family: DynamicsFamily, c: &DynamicsConstants) -> Option<Self> {
        Some(match family {
            DynamicsFamily::Population => DynamicsParams::Population {
                b_coef: c.population_b_coef,
                b_exp: c.population_b_exp,
                a_exp: c.population_a_exp,
            },
            DynamicsFamily::Regulatory => DynamicsParams::Regulatory {
                b: c.regulatory_b,
                f: c.regulatory_f,
                h: c.regulatory_h,
            },
            DynamicsFamily::Mutualistic => DynamicsParams::Mutualistic {
                alpha: c.mutualistic_alpha,
                b: c.mutualistic_b,
                c: c.mutualistic_c,
                a: c.mutualistic_a,
                h: c.mutualistic_h,
            },
            DynamicsFamily::Neural => DynamicsParams::Neural {
                tau: c.neural_tau,
                mu: c.neural_mu,
            },
            DynamicsFamily::Sis | DynamicsFamily::LotkaVolterra => return None,
        })
    }

    fn check_len(&self, n: usize) -> Result<()> {
        let bad = match self {
            DynamicsParams::Sis { delta } => delta.len() != n || delta.iter().any(|d| *d <= 0.0),
            DynamicsParams::LotkaVolterra { alpha, theta } => {
                alpha.len() != n
                    || theta.len() != n
                    || alpha.iter().chain(theta).any(|v| *v <= 0.0)
            }
            _ => false,
        };
        if bad {
            return Err(Error::Parameter(format!(
                "{} parameters do not match N = {n} or are not positive",
                self.family().label()
            )));
        }
        Ok(())
    }
}

/// Everything needed to reproduce one simulated trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSpec {
    pub params: DynamicsParams,
    pub t_final: f64,
    pub n_timestamps: usize,
    pub seed: u64,
}

impl DynamicsSpec {
    pub fn family(&self) -> DynamicsFamily {
        self.params.family()
    }

    /// Uniform grid `0, dt, ..., t_final` of `n_timestamps` points.
    pub fn time_grid(&self) -> Vec<f64> {
        uniform_grid(self.t_final, self.n_timestamps)
    }
}

pub fn uniform_grid(t_final: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    let mut g: Vec<f64> = (0..n).map(|k| t_final * k as f64 / (n - 1) as f64).collect();
    g[n - 1] = t_final;
    g
}

/// `x^e`, on `max(x, 0)` unless `e` is an integer.
#[inline]
fn pow_clamped(x: f64, e: f64) -> f64 {
    if e.fract() == 0.0 && e.abs() < 64.0 {
        x.powi(e as i32)
    } else {
        x.max(0.0).powf(e)
    }
}

/// Self-dynamics term `f_i(x_i)`.
#[inline]
fn self_term(p: &DynamicsParams, i: usize, x: f64) -> f64 {
    match p {
        DynamicsParams::Sis { delta } => -delta[i] * x,
        DynamicsParams::Population { b_coef, b_exp, .. } => -b_coef * pow_clamped(x, *b_exp),
        DynamicsParams::Regulatory { b, f, .. } => -b * pow_clamped(x, *f),
        DynamicsParams::Mutualistic { b, c, a, .. } => b * x * (1.0 - pow_clamped(x, *a) / c),
        DynamicsParams::Neural { .. } => -x,
        DynamicsParams::LotkaVolterra { alpha, theta } => x * (alpha[i] - theta[i] * x),
    }
}

/// Interaction term `g(x_i, x_j)`, sign included (Lotka-Volterra is `-x_i x_j`).
#[inline]
fn interaction(p: &DynamicsParams, xi: f64, xj: f64) -> f64 {
    match p {
        DynamicsParams::Sis { .. } => (1.0 - xi) * xj,
        DynamicsParams::Population { a_exp, .. } => pow_clamped(xj, *a_exp),
        DynamicsParams::Regulatory { h, .. } => {
            let v = pow_clamped(xj, *h);
            v / (1.0 + v)
        }
        DynamicsParams::Mutualistic { alpha, h, .. } => {
            let v = alpha * pow_clamped(xj, *h);
            xi * v / (1.0 + v)
        }
        DynamicsParams::Neural { tau, mu } => 1.0 / (1.0 + (-tau * (xj - mu)).exp()),
        DynamicsParams::LotkaVolterra { .. } => -xi * xj,
    }
}

/// Right-hand side over precomputed sender lists, written into `out`.
pub fn rhs_into(p: &DynamicsParams, neighbors: &[Vec<(usize, f64)>], x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let xi = x[i];
        let mut acc = self_term(p, i, xi);
        for &(j, w) in &neighbors[i] {
            acc += w * interaction(p, xi, x[j]);
        }
        *o = acc;
    }
}

/// `dx/dt` for the whole network.
pub fn rhs(params: &DynamicsParams, graph: &WeightedGraph, x: &[f64]) -> Result<Vec<f64>> {
    let n = graph.n_nodes();
    if x.len() != n {
        return Err(Error::Shape(format!("state has {} entries for N = {n}", x.len())));
    }
    params.check_len(n)?;
    let mut out = vec![0.0; n];
    rhs_into(params, &graph.neighbors(), x, &mut out);
    Ok(out)
}

/// SIS recovery rates rescaled so that `rho(diag(delta)^-1 A)` equals the
/// target reproduction number.
///
/// Draws `delta0 ~ U[lo, hi]`, then returns
/// `rho(diag(delta0)^-1/2 A diag(delta0)^-1/2) * delta0 / r0`.
pub fn sample_sis_delta(graph: &WeightedGraph, seed: u64, c: &DynamicsConstants) -> Result<Vec<f64>> {
    let n = graph.n_nodes();
    if n == 0 {
        return Err(Error::Parameter("SIS needs a nonempty graph".into()));
    }
    let [lo, hi] = c.sis_delta_range;
    let mut rng = rng::stream(seed, 2);
    let delta0: Vec<f64> = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
    let inv_sqrt: Vec<f64> = delta0.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut m = Tensor::zeros(&[n, n]);
    for &(i, j, w) in graph.edges() {
        m.data_mut()[i * n + j] = inv_sqrt[i] * w * inv_sqrt[j];
    }
    let rho = linalg::spectral_radius(&m, linalg::DEFAULT_TOL)?;
    if rho == 0.0 {
        log::warn!("SIS delta: graph has zero spectral radius, keeping base rates");
        return Ok(delta0);
    }
    Ok(delta0.iter().map(|d| rho * d / c.sis_r0).collect())
}

/// Basic reproduction number `rho(diag(delta)^-1 A)`.
pub fn sis_r0(graph: &WeightedGraph, delta: &[f64]) -> Result<f64> {
    let n = graph.n_nodes();
    let mut m = Tensor::zeros(&[n, n]);
    for &(i, j, w) in graph.edges() {
        m.data_mut()[i * n + j] = w / delta[i];
    }
    linalg::spectral_radius(&m, linalg::DEFAULT_TOL)
}

/// Draws the per-instance parameters of `family` on `graph`.
pub fn sample_params(
    family: DynamicsFamily,
    graph: &WeightedGraph,
    seed: u64,
    c: &DynamicsConstants,
) -> Result<DynamicsParams> {
    if let Some(p) = DynamicsParams::from_constants(family, c) {
        return Ok(p);
    }
    match family {
        DynamicsFamily::Sis => Ok(DynamicsParams::Sis {
            delta: sample_sis_delta(graph, seed, c)?,
        }),
        DynamicsFamily::LotkaVolterra => {
            let mut rng = rng::stream(seed, 3);
            let [lo, hi] = c.lv_range;
            let n = graph.n_nodes();
            let alpha = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
            let theta = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
            Ok(DynamicsParams::LotkaVolterra { alpha, theta })
        }
        _ => unreachable!("constant-only families handled above"),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum IcMode {
    #[default]
    #[serde(rename = "ID", alias = "id")]
    InDistribution,
    #[serde(rename = "OOD", alias = "ood")]
    OutOfDistribution,
}

/// Initial states.
///
/// In-distribution: SIS infects a random half of the nodes at 0.8 and
/// leaves the rest at 0.1; the other families draw uniformly on
/// `[0, 2]`, `[0, 2]`, `[0, 5]`, `[0, 10]`, `[0, 20]`. Out-of-distribution
/// draws come from normal distributions truncated (by rejection) at 0, and
/// additionally at 1 for SIS.
pub fn sample_initial_condition(family: DynamicsFamily, n: usize, mode: IcMode, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, 4);
    match mode {
        IcMode::InDistribution => match family {
            DynamicsFamily::Sis => {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng);
                let mut x = vec![0.1; n];
                for &i in &order[..n / 2] {
                    x[i] = 0.8;
                }
                x
            }
            _ => {
                let hi = match family {
                    DynamicsFamily::Population | DynamicsFamily::Regulatory => 2.0,
                    DynamicsFamily::Mutualistic => 5.0,
                    DynamicsFamily::Neural => 10.0,
                    _ => 20.0,
                };
                (0..n).map(|_| rng.random_range(0.0..hi)).collect()
            }
        },
        IcMode::OutOfDistribution => {
            let (mu, sigma, upper) = match family {
                DynamicsFamily::Sis => (0.5, 0.1, 1.0),
                DynamicsFamily::Regulatory => (6.0, 0.1, f64::INFINITY),
                _ => (6.0, 1.0, f64::INFINITY),
            };
            let normal = Normal::new(mu, sigma).expect("valid normal");
            (0..n)
                .map(|_| loop {
                    let v: f64 = normal.sample(&mut rng);
                    if (0.0..=upper).contains(&v) {
                        break v;
                    }
                })
                .collect()
        }
    }
}

/// Integrates the network ODE on the uniform grid of `spec`.
pub fn integrate(spec: &DynamicsSpec, graph: &WeightedGraph, x0: &[f64]) -> Result<TrajectorySet> {
    integrate_with(spec, graph, x0, &DopriOptions::default())
}

pub fn integrate_with(
    spec: &DynamicsSpec,
    graph: &WeightedGraph,
    x0: &[f64],
    opts: &DopriOptions,
) -> Result<TrajectorySet> {
    let n = graph.n_nodes();
    if x0.len() != n {
        return Err(Error::Shape(format!("initial state has {} entries for N = {n}", x0.len())));
    }
    if !(spec.t_final > 0.0) || spec.n_timestamps < 2 {
        return Err(Error::Parameter("need t_final > 0 and at least 2 timestamps".into()));
    }
    spec.params.check_len(n)?;
    let neighbors = graph.neighbors();
    let grid = spec.time_grid();
    let (states, _) = solve_on_grid(
        |_, x, out| rhs_into(&spec.params, &neighbors, x, out),
        x0,
        &grid,
        opts,
    )?;
    if let Some((k, _)) = states
        .iter()
        .enumerate()
        .find(|(_, s)| s.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Integration {
            time: grid[k],
            reason: "non-finite state".into(),
        });
    }
    TrajectorySet::from_time_major(&states, grid, 1)
}

/// Replaces every entry of the first `t_obs` timestamps by a draw from
/// `Normal(x, sigma |x|)`; later timestamps are untouched.
pub fn add_observation_noise(traj: &TrajectorySet, t_obs: usize, sigma: f64, seed: u64) -> Result<TrajectorySet> {
    if !(sigma >= 0.0) {
        return Err(Error::Parameter(format!("noise level {sigma} must be nonnegative")));
    }
    let mut out = traj.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let mut rng = rng::stream(seed, 5);
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let (n, t_len, d) = (traj.n_nodes(), traj.n_times(), traj.dim());
    let window = t_obs.min(t_len);
    for i in 0..n {
        for t in 0..window {
            for f in 0..d {
                let x = traj.get(i, t, f);
                let z: f64 = normal.sample(&mut rng);
                out.set(i, t, f, x + sigma * x.abs() * z);
            }
        }
    }
    Ok(out)
}

/// Full pipeline for one instance: weighted graph, parameters, initial
/// condition, trajectory.
pub fn simulate_instance(
    family: DynamicsFamily,
    topology: &graph::TopologySpec,
    constants: &DynamicsConstants,
    ic_mode: IcMode,
    t_final: f64,
    n_timestamps: usize,
    seed: u64,
) -> Result<(WeightedGraph, DynamicsSpec, TrajectorySet)> {
    let g = graph::generate(topology)?;
    let params = sample_params(family, &g, rng::derive_seed(seed, 0, 1), constants)?;
    let spec = DynamicsSpec {
        params,
        t_final,
        n_timestamps,
        seed,
    };
    let x0 = sample_initial_condition(family, g.n_nodes(), ic_mode, rng::derive_seed(seed, 0, 2));
    match integrate(&spec, &g, &x0) {
        Ok(traj) => Ok((g, spec, traj)),
        Err(first) => {
            log::warn!("integration failed ({first}); resampling the initial condition once");
            let x0 = sample_initial_condition(family, g.n_nodes(), ic_mode, rng::derive_seed(seed, 1, 2));
            let traj = integrate(&spec, &g, &x0)?;
            Ok((g, spec, traj))
        }
    }
}
