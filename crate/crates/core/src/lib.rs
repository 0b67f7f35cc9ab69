//! Continual-learning engine built around a growing library of neural modules.
//!
//! A predictor for a task is a *path*: one module per layer, composed
//! bottom-up. Modules committed for past tasks are frozen, so old predictors
//! never change and forgetting is zero by construction. New tasks search a
//! small candidate set (reuse a prefix of a promising past path, fresh
//! modules from the branch point down) guided by a nearest-neighbour prior
//! over past predictors' features.
//!
//! The crate also ships the classical baselines the benchmark compares
//! against (independent, finetune, new-head, new-leg, online EWC, episodic
//! replay), a synthetic stream generator, a metrics suite (accuracy,
//! forgetting, transfer, learning-curve area, memory, FLOPs) and the `modcl`
//! CLI harness that ties them together.

pub mod adam;
pub mod config;
pub mod data;
pub mod error;
pub mod graph;
pub mod idx;
pub mod learners;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod prior;
pub mod report;
pub mod runner;
pub mod seed;
pub mod snapshot;
pub mod streams;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;
