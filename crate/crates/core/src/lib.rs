//! Desk-scale laboratory for unlearning in denoising diffusion models.
//!
//! The crate trains small denoising diffusion models on toy data, estimates
//! per-parameter posterior statistics from checkpoints, runs a two-term
//! unlearning loss (a plasticity inducer that raises denoising error on the
//! forget set, and a stability regularizer that anchors parameters to their
//! pre-trained posterior), and evaluates the result with a percentage-of-
//! unlearning metric and a Gaussian-fit Fréchet distance.
//!
//! Modules mirror the pipeline stages:
//!
//! - [`schedule`] — noise schedules and derived per-timestep quantities
//! - [`diffgraph`] — minimal reverse-mode autodiff over flat parameter vectors
//! - [`denoiser`] — the noise-prediction MLP and its timestep embedding
//! - [`diffusion`] — forward process, posteriors, sampling, training loss
//! - [`data`] — 2-D Gaussian-mixture datasets and IDX image ingestion
//! - [`checkpoints`] — binary checkpoint format and posterior statistics
//! - [`vdu`] — the unlearning loss, Adam, and the unlearning loop
//! - [`eval`] — classification of samples, PUL, Fréchet distance, sweeps

pub mod checkpoints;
pub mod data;
pub mod denoiser;
pub mod diffgraph;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod schedule;
pub mod vdu;

pub use error::{Error, Result};
