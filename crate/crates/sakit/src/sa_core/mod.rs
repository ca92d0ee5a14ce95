//! The generic SA engine.
//!
//! [`run_sa`] iterates `w_{k+1} = w_k + γ_{k+1} H(w_k, X_{k+1})` and logs, for every `k`, the
//! quantities `(γ_{k+1}, W(w_k), V(w_k), ‖h(w_k)‖²)` evaluated before the update. The rest of
//! the module holds the step-size schedules, the assumption constants and the algebra that
//! turns them into step-size limits, stopping weights and ε-budgets.

mod budget;
mod constants;
mod engine;
mod schedule;
mod stopping;

pub use budget::{epsilon_budget, EpsilonBudget, Precision};
pub use constants::{derive_constants, DerivedConstants, Ext, RegimeConstants};
pub(crate) use engine::check_finite;
pub use engine::{
    replicate_rng, run_sa, FieldOracle, Lyapunov, ParamVec, Record, RunOptions, RunSeed, SaRng, TrajectoryLog,
};
pub use schedule::{check_ratio_condition, schedule_gamma, StepSchedule};
pub use stopping::{omegas_for, select_output, stopping_weights, StoppingRule};
