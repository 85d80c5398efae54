//! Labeled transition systems with deterministic affine actions.
//!
//! A state pairs a discrete valuation (finite-valued variables) with a real
//! vector. Every action carries a guard, a matrix shared by all discrete
//! valuations, a valuation-dependent offset and a discrete update that reads
//! only the discrete part. Actions are total functions: applying an action
//! outside its guard is allowed and yields the potential successor.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of an action in its system's declaration order.
pub type ActionId = usize;

/// Vector norm used for every distance, ball and induced-norm computation of a system.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    L2,
    Linf,
}

impl Norm {
    pub fn length(self, v: &DVector<f64>) -> f64 {
        match self {
            Norm::L2 => v.norm(),
            Norm::Linf => v.amax(),
        }
    }

    /// Length under the dual norm (2 for 2, 1 for ∞).
    pub fn dual_length(self, v: &DVector<f64>) -> f64 {
        match self {
            Norm::L2 => v.norm(),
            Norm::Linf => v.lp_norm(1),
        }
    }

    pub fn distance(self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        match self {
            Norm::L2 => a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Norm::Linf => a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs())),
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Norm::L2 => write!(f, "2"),
            Norm::Linf => write!(f, "inf"),
        }
    }
}

/// A finite-valued variable taking values `0..domain`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscreteVar {
    pub name: String,
    pub domain: u32,
}

impl DiscreteVar {
    pub fn new(name: impl Into<String>, domain: u32) -> Self {
        Self { name: name.into(), domain }
    }

    pub fn boolean(name: impl Into<String>) -> Self {
        Self::new(name, 2)
    }
}

/// Discrete valuation, one value per declared variable in declaration order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DiscreteState(Vec<u32>);

impl DiscreteState {
    pub fn new(values: Vec<u32>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[u32] {
        &self.0
    }

    pub fn get(&self, var: usize) -> u32 {
        self.0[var]
    }

    pub fn set(&mut self, var: usize, value: u32) {
        self.0[var] = value;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub discrete: DiscreteState,
    pub continuous: DVector<f64>,
}

impl State {
    pub fn new(discrete: DiscreteState, continuous: DVector<f64>) -> Self {
        Self { discrete, continuous }
    }
}

/// Closed half-space `normal · x ≤ bound`.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfSpace {
    pub normal: DVector<f64>,
    pub bound: f64,
}

impl HalfSpace {
    pub fn new(normal: DVector<f64>, bound: f64) -> Self {
        Self { normal, bound }
    }

    /// `normal · x − bound`; non-positive inside.
    pub fn excess(&self, x: &DVector<f64>) -> f64 {
        self.normal.dot(x) - self.bound
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.excess(x) <= 0.0
    }

    /// Exact test for a non-empty intersection with the closed ball `B_radius(center)`.
    pub fn intersects_ball(&self, center: &DVector<f64>, radius: f64, norm: Norm) -> bool {
        self.excess(center) <= radius * norm.dual_length(&self.normal)
    }
}

/// Conjunction of discrete equalities and closed half-spaces.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Guard {
    pub discrete: Vec<(usize, u32)>,
    pub half_spaces: Vec<HalfSpace>,
}

impl Guard {
    pub fn always() -> Self {
        Self::default()
    }

    pub fn discrete_holds(&self, l: &DiscreteState) -> bool {
        self.discrete.iter().all(|&(var, value)| l.get(var) == value)
    }

    pub fn contains(&self, q: &State) -> bool {
        self.discrete_holds(&q.discrete) && self.half_spaces.iter().all(|h| h.contains(&q.continuous))
    }

    /// Existential test: some state of the ball satisfies the guard. Every
    /// half-space must reach the ball; for a single half-space (and for
    /// discrete-only guards) this is exact.
    pub fn intersects_ball(&self, ball: &Ball, norm: Norm) -> bool {
        self.discrete_holds(&ball.center.discrete)
            && self
                .half_spaces
                .iter()
                .all(|h| h.intersects_ball(&ball.center.continuous, ball.radius, norm))
    }
}

/// Discrete part of an action's effect.
#[derive(Clone, Debug, PartialEq)]
pub enum DiscreteUpdate {
    /// Assign constants to the listed variables; everything else is kept.
    Assign(Vec<(usize, u32)>),
    /// Explicit successor for every covered valuation.
    Table(BTreeMap<DiscreteState, DiscreteState>),
}

impl Default for DiscreteUpdate {
    fn default() -> Self {
        DiscreteUpdate::Assign(Vec::new())
    }
}

impl DiscreteUpdate {
    pub fn apply(&self, l: &DiscreteState) -> Result<DiscreteState> {
        match self {
            DiscreteUpdate::Assign(assignments) => {
                let mut next = l.clone();
                for &(var, value) in assignments {
                    next.set(var, value);
                }
                Ok(next)
            }
            DiscreteUpdate::Table(table) => table
                .get(l)
                .cloned()
                .ok_or_else(|| Error::Config(format!("discrete update table has no entry for {:?}", l.values()))),
        }
    }
}

/// Offset `b(ℓ)` added after the linear part.
#[derive(Clone, Debug, PartialEq)]
pub enum Offset {
    Constant(DVector<f64>),
    Table(BTreeMap<DiscreteState, DVector<f64>>),
    /// `constant + Σ column_v · value(v)`, reading the valuation before or after the discrete update.
    Linear {
        constant: DVector<f64>,
        terms: Vec<(usize, DVector<f64>)>,
        after_update: bool,
    },
}

impl Offset {
    pub fn zero(dim: usize) -> Self {
        Offset::Constant(DVector::zeros(dim))
    }

    fn eval(&self, pre: &DiscreteState, post: &DiscreteState) -> Result<DVector<f64>> {
        match self {
            Offset::Constant(b) => Ok(b.clone()),
            Offset::Table(table) => table
                .get(pre)
                .cloned()
                .ok_or_else(|| Error::Config(format!("offset table has no entry for {:?}", pre.values()))),
            Offset::Linear { constant, terms, after_update } => {
                let l = if *after_update { post } else { pre };
                let mut b = constant.clone();
                for (var, column) in terms {
                    b.axpy(f64::from(l.get(*var)), column, 1.0);
                }
                Ok(b)
            }
        }
    }

    fn dimension_ok(&self, dim: usize) -> bool {
        match self {
            Offset::Constant(b) => b.len() == dim,
            Offset::Table(t) => t.values().all(|b| b.len() == dim),
            Offset::Linear { constant, terms, .. } => {
                constant.len() == dim && terms.iter().all(|(_, c)| c.len() == dim)
            }
        }
    }

    fn all_finite(&self) -> bool {
        let finite = |v: &DVector<f64>| v.iter().all(|x| x.is_finite());
        match self {
            Offset::Constant(b) => finite(b),
            Offset::Table(t) => t.values().all(finite),
            Offset::Linear { constant, terms, .. } => finite(constant) && terms.iter().all(|(_, c)| finite(c)),
        }
    }
}

/// Deterministic action `x ↦ A·x + b(ℓ)`, `ℓ ↦ update(ℓ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineAction {
    pub name: String,
    pub guard: Guard,
    pub matrix: DMatrix<f64>,
    pub offset: Offset,
    pub update: DiscreteUpdate,
}

impl AffineAction {
    pub fn new(name: impl Into<String>, matrix: DMatrix<f64>) -> Self {
        let dim = matrix.nrows();
        Self {
            name: name.into(),
            guard: Guard::always(),
            matrix,
            offset: Offset::zero(dim),
            update: DiscreteUpdate::default(),
        }
    }

    pub fn with_guard(mut self, guard: Guard) -> Self {
        self.guard = guard;
        self
    }

    pub fn with_offset(mut self, offset: Offset) -> Self {
        self.offset = offset;
        self
    }

    pub fn with_update(mut self, update: DiscreteUpdate) -> Self {
        self.update = update;
        self
    }

    /// The offset `b(ℓ)` for a discrete valuation.
    pub fn offset_at(&self, l: &DiscreteState) -> Result<DVector<f64>> {
        let post = self.update.apply(l)?;
        self.offset.eval(l, &post)
    }

    /// Transition function, defined on every state regardless of the guard.
    pub fn apply(&self, q: &State) -> Result<State> {
        let discrete = self.update.apply(&q.discrete)?;
        let mut continuous = self.offset.eval(&q.discrete, &discrete)?;
        continuous.gemv(1.0, &self.matrix, &q.continuous, 1.0);
        Ok(State { discrete, continuous })
    }

    pub fn is_enabled(&self, q: &State) -> bool {
        self.guard.contains(q)
    }
}

/// Compact initial continuous set.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialSet {
    Box { lower: DVector<f64>, upper: DVector<f64> },
    Ball { center: DVector<f64>, radius: f64 },
}

impl InitialSet {
    pub fn dimension(&self) -> usize {
        match self {
            InitialSet::Box { lower, .. } => lower.len(),
            InitialSet::Ball { center, .. } => center.len(),
        }
    }

    pub fn contains(&self, x: &DVector<f64>, norm: Norm) -> bool {
        match self {
            InitialSet::Box { lower, upper } => {
                x.iter().zip(lower.iter().zip(upper.iter())).all(|(v, (lo, hi))| lo <= v && v <= hi)
            }
            InitialSet::Ball { center, radius } => norm.distance(x, center) <= *radius,
        }
    }

    /// Upper bound on `|x|` over the set.
    pub fn sup_norm(&self, norm: Norm) -> f64 {
        match self {
            InitialSet::Box { lower, upper } => {
                let corner = DVector::from_iterator(
                    lower.len(),
                    lower.iter().zip(upper.iter()).map(|(lo, hi)| lo.abs().max(hi.abs())),
                );
                norm.length(&corner)
            }
            InitialSet::Ball { center, radius } => norm.length(center) + radius,
        }
    }

    pub fn center(&self) -> DVector<f64> {
        match self {
            InitialSet::Box { lower, upper } => (lower + upper) * 0.5,
            InitialSet::Ball { center, .. } => center.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = |v: &DVector<f64>| v.iter().all(|x| x.is_finite());
        match self {
            InitialSet::Box { lower, upper } => {
                if lower.len() != upper.len() || !finite(lower) || !finite(upper) {
                    return Err(Error::Config("initial box bounds must be finite and of equal length".into()));
                }
                if lower.iter().zip(upper.iter()).any(|(lo, hi)| lo > hi) {
                    return Err(Error::Config("initial box has lower > upper".into()));
                }
            }
            InitialSet::Ball { center, radius } => {
                if !finite(center) || !radius.is_finite() || *radius < 0.0 {
                    return Err(Error::Config("initial ball must have a finite center and radius ≥ 0".into()));
                }
            }
        }
        Ok(())
    }
}

/// Finite sequence of actions.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Trace(Vec<ActionId>);

impl Trace {
    pub fn new(actions: Vec<ActionId>) -> Self {
        Self(actions)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn push(&mut self, a: ActionId) {
        self.0.push(a);
    }

    /// `self · a`
    pub fn extended(&self, a: ActionId) -> Self {
        let mut v = Vec::with_capacity(self.0.len() + 1);
        v.extend_from_slice(&self.0);
        v.push(a);
        Self(v)
    }

    pub fn into_vec(self) -> Vec<ActionId> {
        self.0
    }

    /// Space-separated action names.
    pub fn display<'a>(&'a self, system: &'a TransitionSystem) -> impl fmt::Display + 'a {
        TraceDisplay { trace: self, system }
    }
}

impl Deref for Trace {
    type Target = [ActionId];
    fn deref(&self) -> &[ActionId] {
        &self.0
    }
}

impl From<Vec<ActionId>> for Trace {
    fn from(v: Vec<ActionId>) -> Self {
        Self(v)
    }
}

impl FromIterator<ActionId> for Trace {
    fn from_iter<I: IntoIterator<Item = ActionId>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

struct TraceDisplay<'a> {
    trace: &'a Trace,
    system: &'a TransitionSystem,
}

impl fmt::Display for TraceDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.trace.is_empty() {
            return write!(f, "ε");
        }
        for (i, &a) in self.trace.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{}", self.system.actions[a].name)?;
        }
        Ok(())
    }
}

/// `q0, a0, q1, …, qn` with `q_{i+1} = a_i(q_i)`, guards not consulted.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialExecution {
    pub trace: Trace,
    pub states: Vec<State>,
}

impl PotentialExecution {
    pub fn len(&self) -> usize {
        self.trace.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trace.is_empty()
    }

    pub fn fstate(&self) -> &State {
        &self.states[0]
    }

    pub fn lstate(&self) -> &State {
        self.states.last().expect("an execution holds at least its initial state")
    }
}

/// Closed neighborhood `{q' : q'.L = center.L ∧ |q'.X − center.X| ≤ radius}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ball {
    pub center: State,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: State, radius: f64) -> Self {
        Self { center, radius }
    }

    /// `radius − distance`, or −∞ when the discrete parts differ.
    pub fn slack(&self, q: &State, norm: Norm) -> f64 {
        if q.discrete != self.center.discrete {
            return f64::NEG_INFINITY;
        }
        self.radius - norm.distance(&self.center.continuous, &q.continuous)
    }

    pub fn contains(&self, q: &State, norm: Norm) -> bool {
        self.slack(q, norm) >= 0.0
    }
}

/// A labeled transition system with affine actions.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionSystem {
    pub dimension: usize,
    pub variables: Vec<DiscreteVar>,
    pub actions: Vec<AffineAction>,
    pub initial_discrete: DiscreteState,
    pub initial_set: InitialSet,
    /// Certified bound on `|q.X|` over reachable states.
    pub invariant_radius: Option<f64>,
    /// Check the non-expansion certificate for `invariant_radius` instead of trusting it.
    pub certify_invariant: bool,
    pub norm: Norm,
}

impl TransitionSystem {
    pub fn new(
        dimension: usize,
        variables: Vec<DiscreteVar>,
        actions: Vec<AffineAction>,
        initial_discrete: DiscreteState,
        initial_set: InitialSet,
        norm: Norm,
    ) -> Result<Self> {
        let system = Self {
            dimension,
            variables,
            actions,
            initial_discrete,
            initial_set,
            invariant_radius: None,
            certify_invariant: false,
            norm,
        };
        system.validate()?;
        Ok(system)
    }

    pub fn with_invariant_radius(mut self, radius: f64, certify: bool) -> Result<Self> {
        if !radius.is_finite() || radius < 0.0 {
            return Err(Error::Config(format!("invariant radius must be finite and ≥ 0, got {radius}")));
        }
        self.invariant_radius = Some(radius);
        self.certify_invariant = certify;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let dim = self.dimension;
        if dim == 0 {
            return Err(Error::Config("continuous dimension must be positive".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for v in &self.variables {
            if v.domain == 0 {
                return Err(Error::Config(format!("variable `{}` has an empty domain", v.name)));
            }
            if !seen.insert(v.name.as_str()) {
                return Err(Error::Config(format!("duplicate variable `{}`", v.name)));
            }
        }
        self.check_valuation(&self.initial_discrete, "initial valuation")?;
        let mut names = std::collections::HashSet::new();
        for a in &self.actions {
            if !names.insert(a.name.as_str()) {
                return Err(Error::Config(format!("duplicate action name `{}`", a.name)));
            }
            if a.matrix.nrows() != dim || a.matrix.ncols() != dim {
                return Err(Error::Config(format!(
                    "action `{}`: matrix is {}×{}, expected {dim}×{dim}",
                    a.name,
                    a.matrix.nrows(),
                    a.matrix.ncols()
                )));
            }
            if a.matrix.iter().any(|x| !x.is_finite()) || !a.offset.all_finite() {
                return Err(Error::Config(format!("action `{}` has non-finite coefficients", a.name)));
            }
            if !a.offset.dimension_ok(dim) {
                return Err(Error::Config(format!("action `{}`: offset dimension mismatch", a.name)));
            }
            for h in &a.guard.half_spaces {
                if h.normal.len() != dim || !h.bound.is_finite() || h.normal.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Config(format!("action `{}`: malformed guard half-space", a.name)));
                }
            }
            let var_ok = |&(var, value): &(usize, u32)| var < self.variables.len() && value < self.variables[var].domain;
            if !a.guard.discrete.iter().all(var_ok) {
                return Err(Error::Config(format!("action `{}`: guard refers to an invalid discrete value", a.name)));
            }
            match &a.update {
                DiscreteUpdate::Assign(list) if !list.iter().all(var_ok) => {
                    return Err(Error::Config(format!("action `{}`: update assigns an invalid value", a.name)));
                }
                DiscreteUpdate::Table(table) => {
                    for (from, to) in table {
                        self.check_valuation(from, "update table key")?;
                        self.check_valuation(to, "update table value")?;
                    }
                }
                _ => {}
            }
            if let Offset::Linear { terms, .. } = &a.offset {
                if terms.iter().any(|(var, _)| *var >= self.variables.len()) {
                    return Err(Error::Config(format!("action `{}`: offset term refers to unknown variable", a.name)));
                }
            }
        }
        self.initial_set.validate()?;
        if self.initial_set.dimension() != dim {
            return Err(Error::Config("initial set dimension mismatch".into()));
        }
        Ok(())
    }

    fn check_valuation(&self, l: &DiscreteState, what: &str) -> Result<()> {
        if l.values().len() != self.variables.len()
            || l.values().iter().zip(&self.variables).any(|(v, var)| *v >= var.domain)
        {
            return Err(Error::Config(format!("{what} {:?} does not match the declared variables", l.values())));
        }
        Ok(())
    }

    pub fn action(&self, id: ActionId) -> &AffineAction {
        &self.actions[id]
    }

    pub fn action_id(&self, name: &str) -> Result<ActionId> {
        self.actions
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAction(name.to_string()))
    }

    pub fn variable_index(&self, name: &str) -> Result<usize> {
        self.variables
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| Error::Config(format!("unknown discrete variable `{name}`")))
    }

    /// Parse a trace from action names.
    pub fn trace<S: AsRef<str>>(&self, names: &[S]) -> Result<Trace> {
        names.iter().map(|n| self.action_id(n.as_ref())).collect()
    }

    pub fn apply(&self, a: ActionId, q: &State) -> Result<State> {
        self.actions
            .get(a)
            .ok_or_else(|| Error::UnknownAction(format!("#{a}")))?
            .apply(q)
    }

    pub fn is_enabled(&self, a: ActionId, q: &State) -> bool {
        self.actions[a].is_enabled(q)
    }

    pub fn enabled_actions(&self, q: &State) -> Vec<ActionId> {
        (0..self.actions.len()).filter(|&a| self.is_enabled(a, q)).collect()
    }

    pub fn simulate(&self, q0: &State, trace: &Trace) -> Result<PotentialExecution> {
        let mut states = Vec::with_capacity(trace.len() + 1);
        states.push(q0.clone());
        for &a in trace.iter() {
            let next = self.apply(a, states.last().expect("non-empty"))?;
            states.push(next);
        }
        Ok(PotentialExecution { trace: trace.clone(), states })
    }

    /// Last state only, without caching the prefix.
    pub fn last_state(&self, q0: &State, trace: &[ActionId]) -> Result<State> {
        let mut q = q0.clone();
        for &a in trace {
            q = self.apply(a, &q)?;
        }
        Ok(q)
    }

    pub fn in_initial_set(&self, q: &State) -> bool {
        q.discrete == self.initial_discrete && self.initial_set.contains(&q.continuous, self.norm)
    }

    /// `q0 ∈ Θ` and every action fires from inside its guard.
    pub fn is_valid_execution(&self, xi: &PotentialExecution) -> bool {
        self.in_initial_set(xi.fstate())
            && xi.trace.iter().zip(&xi.states).all(|(&a, q)| self.is_enabled(a, q))
    }

    /// State with the initial valuation and the given continuous part.
    pub fn initial_state(&self, x: DVector<f64>) -> State {
        State::new(self.initial_discrete.clone(), x)
    }

    /// Every discrete valuation of the declared variables, in lexicographic order.
    pub fn discrete_valuations(&self) -> Vec<DiscreteState> {
        let mut out = vec![Vec::with_capacity(self.variables.len())];
        for var in &self.variables {
            let mut next = Vec::with_capacity(out.len() * var.domain as usize);
            for prefix in &out {
                for value in 0..var.domain {
                    let mut p = prefix.clone();
                    p.push(value);
                    next.push(p);
                }
            }
            out = next;
        }
        out.into_iter().map(DiscreteState::new).collect()
    }
}
