//! Training and evaluation of binary classifiers under severe class imbalance.
//!
//! The crate trains one small FiLM-conditioned MLP over a *distribution* of
//! loss hyperparameters (loss-conditional training), so that the trade-off
//! between precision, recall and calibration can be chosen after training by
//! feeding a different hyperparameter vector at inference time.
//!
//! Module map:
//!
//! - [`ndmath`]: dense matrices and the in-repo xoshiro RNG.
//! - [`losses`]: focal and vector-scaling (VS) losses with analytic gradients.
//! - [`sampler`]: the linear pdf `L(a,b,h_b)` and per-mini-batch λ draws.
//! - [`film_net`]: the MLP with one FiLM block, forward/backward passes.
//! - [`optim`]: SGD with momentum, Adam, SAM and gradient clipping.
//! - [`metrics`]: confusion metrics, ROC/PR curves, AUC, AP and Brier score.
//! - [`data`]: synthetic Gaussian data, CSV ingestion, imbalance subsampling.
//! - [`trainer`]: baseline, LCT and LCT-without-FiLM training; evaluation.
//! - [`harness`]: sweep specification, result store, aggregate tables.
//! - [`checkpoint`]: the versioned binary model file.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod film_net;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod ndmath;
pub mod optim;
pub mod sampler;
pub mod trainer;

pub use error::{Error, Result};
