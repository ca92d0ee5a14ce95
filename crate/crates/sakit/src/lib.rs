//! Stochastic approximation toolkit.
//!
//! The crate runs the recursion `w_{k+1} = w_k + γ_{k+1} H(w_k, X_{k+1})` against pluggable
//! random-field oracles and checks the resulting trajectories against non-asymptotic bounds.
//!
//! * [`sa_core`]: the engine, step schedules, stopping rules and constant algebra.
//! * [`problems_sgd`], [`compression`], [`problems_em`], [`problems_td`]: oracle families with
//!   their assumption constants.
//! * [`spider`]: the variance-reduced SA-SPIDER scheme for finite-sum fields.
//! * [`diagnostics`]: Monte-Carlo certification of the assumptions, descent checks, rate fits
//!   and bound curves.

// Argument checks are written as `!(x > 0.0)` so that NaN is rejected along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compression;
pub mod diagnostics;
mod error;
pub mod linalg;
pub mod problems_em;
pub mod problems_sgd;
pub mod problems_td;
pub mod sa_core;
pub mod sampling;
pub mod spider;

pub use error::{Error, Result};
pub use nalgebra;
pub use sa_core::{
    derive_constants, epsilon_budget, replicate_rng, run_sa, schedule_gamma, select_output, stopping_weights,
    DerivedConstants, EpsilonBudget, Ext, FieldOracle, Lyapunov, ParamVec, Precision, Record, RegimeConstants,
    RunOptions, RunSeed, SaRng, StepSchedule, StoppingRule, TrajectoryLog,
};
