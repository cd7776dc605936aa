//! Hyperparameter optimization with sub-sampling bandit evaluation.
//!
//! The crate is organised by policy family:
//!
//! - [`domain`]: search spaces, configurations, arm histories, traces.
//! - [`subsample`]: sub-sampling (SS) and its sortable variant (MSS).
//! - [`halving`]: successive halving and HyperBand schedules.
//! - [`surrogate`]: the tree-structured Parzen estimator.
//! - [`orchestrator`]: BOSS, BOHB and the asynchronous parallel scheduler.
//! - [`theory`]: exponential families, rate functions and regret bounds.
//! - [`bench`]: Gaussian-arm experiments, regret metrics and tests.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod domain;
pub mod error;
pub mod halving;
pub mod orchestrator;
pub mod subsample;
pub mod surrogate;
pub mod theory;

mod num;

pub use domain::{
    ArmState, ConfigId, ConfigSpace, Configuration, Event, EventSink, NoEvents, Objective, ParamKind,
    ParamSpec, ParamValue, Trace, TrialRecord,
};
pub use error::{Error, EvalError, Result};
