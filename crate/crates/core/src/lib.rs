//! Simulation of networked dynamical systems and topology-agnostic latent
//! graph ODE forecasting.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`]: random topologies (ER, scale-free, community), link weights
//!   and spectral radius.
//! - [`dynamics`]: six ground-truth coupled ODE families, parameter and
//!   initial-condition sampling, Dormand-Prince integration.
//! - [`tensor`]: dense tensors with a reverse-mode differentiation tape.
//! - [`model`]: encoders, static-edge and attention latent ODEs, decoder.
//! - [`train`]: AdamW with cosine annealing, evaluation, transductive runs.
//! - [`metrics`]: MAPE / MAE / RMSE, error curves and state grids.
//! - [`dataset`] and [`experiment`]: on-disk datasets and the experiment
//!   protocols driven by the `netdyn` binary.

pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
