//! Bounded reachability for affine transition systems, exploring one trace per class of approximately commuting actions.
//!
//! Actions whose effects commute up to a small error ε are treated as
//! interchangeable, so only one representative trace per ε-equivalence class is
//! simulated. Each representative carries a radius (the trace-equivalent
//! discrepancy factor) large enough to contain every related execution, which
//! keeps the over-approximation sound.

pub mod config;
pub mod discrepancy;
pub mod error;
pub mod independence;
pub mod lts;
pub mod models;
pub mod oracle;
pub mod reach;
pub mod ted;

pub use discrepancy::{beta_max, compose_along_trace, gamma, induced_2norm, induced_norm, linear_discrepancy, Discrepancy};
pub use error::{Error, Result};
pub use independence::{canonical_key, commutation_bound, eep, trace_equivalent, Bound, IndependenceTable};
pub use lts::{
    ActionId, AffineAction, Ball, DiscreteState, DiscreteUpdate, DiscreteVar, Guard, HalfSpace, InitialSet, Norm, Offset,
    PotentialExecution, State, Trace, TransitionSystem,
};
pub use models::ModelPreset;
pub use reach::{check_safety, delta_cover, reach, reach_bounds, reach_prepared, ReachOptions, ReachResult, ReachTuple, SafetyQuery, Verdict};
pub use ted::{comp_ted, ted_for_trace, TedState};
