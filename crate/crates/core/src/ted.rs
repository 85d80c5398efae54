//! Trace-equivalent discrepancy factors.
//!
//! A factor `r` for an anchor execution `ξ_{q0,τ}` bounds the distance between
//! its last state and the last state of every potential execution that starts
//! within `δ0` of `q0` and follows a trace ε-equivalent to `τ`.

use crate::discrepancy::{beta_max, gamma, Discrepancy};
use crate::error::{Error, Result};
use crate::independence::{eep, IndependenceTable};
use crate::lts::{ActionId, Trace};

fn check_args(r: f64, epsilon: f64) -> Result<()> {
    if !(r >= 0.0) {
        return Err(Error::Domain(format!("radius must be non-negative, got {r}")));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::Domain(format!("ε must be non-negative, got {epsilon}")));
    }
    Ok(())
}

fn update(
    trace: &[ActionId],
    a: ActionId,
    r: f64,
    epsilon: f64,
    beta: &Discrepancy,
    betas: &[Discrepancy],
    table: &IndependenceTable,
) -> Result<f64> {
    let beta_a = betas.get(a).ok_or_else(|| Error::UnknownAction(format!("#{a}")))?;
    let t = trace.len();
    let k = eep(trace, a, table);
    debug_assert!(k <= t, "eep exceeded the trace length");
    let base = beta_a.eval(r);
    if k == t {
        Ok(base)
    } else {
        Ok(base + gamma(t - k - 1, epsilon, beta)?)
    }
}

/// Factor for `trace·a` given a factor `r` for `trace`.
pub fn comp_ted(
    trace: &[ActionId],
    a: ActionId,
    r: f64,
    epsilon: f64,
    betas: &[Discrepancy],
    table: &IndependenceTable,
) -> Result<f64> {
    check_args(r, epsilon)?;
    let mut members = Vec::with_capacity(trace.len() + 1);
    for &b in trace.iter().chain(std::iter::once(&a)) {
        members.push(betas.get(b).ok_or_else(|| Error::UnknownAction(format!("#{b}")))?);
    }
    let beta = beta_max(members)?;
    update(trace, a, r, epsilon, &beta, betas, table)
}

/// Factor for the whole trace, starting from `δ0` on the empty trace.
pub fn ted_for_trace(
    trace: &[ActionId],
    delta0: f64,
    epsilon: f64,
    betas: &[Discrepancy],
    table: &IndependenceTable,
) -> Result<f64> {
    let mut state = TedState::new(delta0)?;
    for &a in trace {
        state = state.extend(a, epsilon, betas, table)?;
    }
    Ok(state.radius)
}

/// A trace with its current factor and the running maximum of its actions' discrepancies.
#[derive(Clone, Debug)]
pub struct TedState {
    pub trace: Trace,
    pub radius: f64,
    beta: Option<Discrepancy>,
}

impl TedState {
    pub fn new(delta0: f64) -> Result<Self> {
        check_args(delta0, 0.0)?;
        Ok(Self { trace: Trace::empty(), radius: delta0, beta: None })
    }

    pub fn extend(&self, a: ActionId, epsilon: f64, betas: &[Discrepancy], table: &IndependenceTable) -> Result<Self> {
        check_args(self.radius, epsilon)?;
        let beta_a = betas.get(a).ok_or_else(|| Error::UnknownAction(format!("#{a}")))?;
        let beta = match (&self.beta, beta_a) {
            (None, _) => beta_a.clone(),
            (Some(Discrepancy::Linear(x)), Discrepancy::Linear(y)) => Discrepancy::Linear(x.max(*y)),
            (Some(b), _) => beta_max([b, beta_a])?,
        };
        let radius = update(&self.trace, a, self.radius, epsilon, &beta, betas, table)?;
        Ok(Self { trace: self.trace.extended(a), radius, beta: Some(beta) })
    }
}
