//! Reduced bounded-time reachability.
//!
//! The initial set is covered by `δ0`-balls. From each cover center one anchor
//! execution per ε-equivalence class of traces is simulated; its ball of radius
//! equal to the trace's discrepancy factor contains every state reached by a
//! related execution.

use std::collections::BTreeSet;
use std::fmt;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rayon::prelude::*;

use crate::discrepancy::{system_discrepancies, Discrepancy};
use crate::error::{Error, Result};
use crate::independence::{canonical_key, IndependenceTable};
use crate::lts::{ActionId, Ball, HalfSpace, InitialSet, Norm, State, Trace, TransitionSystem};
use crate::ted::TedState;

/// Upper limit on the number of cover centers.
pub const MAX_COVER: usize = 1_000_000;

/// Centers of `δ0`-balls covering the initial set, in lexicographic grid order.
pub fn delta_cover(system: &TransitionSystem, delta0: f64) -> Result<Vec<State>> {
    Ok(cover_points(&system.initial_set, system.norm, delta0)?
        .into_iter()
        .map(|x| system.initial_state(x))
        .collect())
}

/// Continuous parts of the cover centers.
pub fn cover_points(set: &InitialSet, norm: Norm, delta0: f64) -> Result<Vec<DVector<f64>>> {
    if !(delta0 > 0.0) || !delta0.is_finite() {
        return Err(Error::Domain(format!("δ0 must be positive and finite, got {delta0}")));
    }
    let (lower, upper) = match set {
        InitialSet::Ball { center, radius } if *radius <= delta0 => return Ok(vec![center.clone()]),
        // the bounding box contains the ball under both norms
        InitialSet::Ball { center, radius } => (center.add_scalar(-radius), center.add_scalar(*radius)),
        InitialSet::Box { lower, upper } => (lower.clone(), upper.clone()),
    };
    let widths: Vec<f64> = lower.iter().zip(upper.iter()).map(|(lo, hi)| hi - lo).collect();
    let spread = widths.iter().filter(|w| **w > 0.0).count().max(1);
    let spacing = match norm {
        Norm::L2 => 2.0 * delta0 / (spread as f64).sqrt(),
        Norm::Linf => 2.0 * delta0,
    };
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(widths.len());
    let mut total: usize = 1;
    for (i, &w) in widths.iter().enumerate() {
        let n = ((w / spacing - 1e-9).ceil() as usize).max(1);
        total = total.saturating_mul(n);
        if total > MAX_COVER {
            return Err(Error::Budget { what: "cover centers", limit: MAX_COVER });
        }
        let lo = lower[i];
        let axis = if n == 1 {
            vec![lo + w / 2.0]
        } else {
            let step = (w - spacing) / (n - 1) as f64;
            (0..n).map(|k| lo + spacing / 2.0 + k as f64 * step).collect()
        };
        axes.push(axis);
    }
    let mut points = vec![Vec::with_capacity(axes.len())];
    for axis in &axes {
        points = points
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    Ok(points.into_iter().map(DVector::from_vec).collect())
}

/// Actions whose guard meets the closed ball `B_radius(center)`.
pub fn enabled_actions_ball(system: &TransitionSystem, center: &State, radius: f64) -> Vec<ActionId> {
    let norm = system.norm;
    (0..system.actions.len())
        .filter(|&a| {
            let g = &system.actions[a].guard;
            g.discrete_holds(&center.discrete)
                && g.half_spaces.iter().all(|h| h.intersects_ball(&center.continuous, radius, norm))
        })
        .collect()
}

/// `⟨τ_t, q_t, δ_t⟩`
#[derive(Clone, Debug)]
pub struct ReachTuple {
    pub state: State,
    pub ted: TedState,
}

impl ReachTuple {
    pub fn trace(&self) -> &Trace {
        &self.ted.trace
    }

    pub fn radius(&self) -> f64 {
        self.ted.radius
    }

    pub fn ball(&self) -> Ball {
        Ball::new(self.state.clone(), self.ted.radius)
    }
}

/// Per-step maximum number of actions enabled on some ball; the product is the
/// number of traces an exhaustive search would face.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NominalCount {
    pub factors: Vec<usize>,
}

impl NominalCount {
    /// Exact value when it fits in 63 bits.
    pub fn exact(&self) -> Option<u64> {
        let mut acc: u64 = 1;
        for &f in &self.factors {
            acc = acc.checked_mul(f as u64)?;
        }
        (acc <= 1 << 63).then_some(acc)
    }
}

impl fmt::Display for NominalCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(v) = self.exact() {
            return write!(f, "{v}");
        }
        let mut counts = std::collections::BTreeMap::new();
        for &x in &self.factors {
            *counts.entry(x).or_insert(0usize) += 1;
        }
        let parts: Vec<String> = counts
            .iter()
            .rev()
            .filter(|(base, _)| **base > 1)
            .map(|(base, exp)| if *exp == 1 { base.to_string() } else { format!("{base}^{exp}") })
            .collect();
        write!(f, "{}", parts.join("·"))
    }
}

/// Axis-aligned hull of the balls of one table.
#[derive(Clone, Debug, PartialEq)]
pub struct StepBox {
    pub tuples: usize,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl StepBox {
    fn of(tuples: &[ReachTuple], dim: usize) -> Self {
        let mut lower = DVector::from_element(dim, f64::INFINITY);
        let mut upper = DVector::from_element(dim, f64::NEG_INFINITY);
        for t in tuples {
            for i in 0..dim {
                let x = t.state.continuous[i];
                lower[i] = lower[i].min(x - t.radius());
                upper[i] = upper[i].max(x + t.radius());
            }
        }
        Self { tuples: tuples.len(), lower, upper }
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.iter().zip(self.lower.iter().zip(self.upper.iter())).all(|(v, (lo, hi))| lo <= v && v <= hi)
    }

    /// Some point of the box satisfies `h`.
    pub fn meets(&self, h: &HalfSpace) -> bool {
        let min: f64 = h
            .normal
            .iter()
            .enumerate()
            .map(|(i, c)| if *c >= 0.0 { c * self.lower[i] } else { c * self.upper[i] })
            .sum();
        min <= h.bound
    }
}

#[derive(Clone, Debug)]
pub struct CoverResult {
    pub center: State,
    /// `R_0 … R_t` for every completed step. Without history only the last table is kept
    /// and earlier entries are empty.
    pub steps: Vec<Vec<ReachTuple>>,
    /// Hull of each table, kept even when the table itself is dropped.
    pub boxes: Vec<StepBox>,
    pub nominal: NominalCount,
}

impl CoverResult {
    /// Traces in the last completed table.
    pub fn explored(&self) -> usize {
        self.boxes.last().map_or(0, |b| b.tuples)
    }

    /// Whether the tuples of step `t` are still available.
    pub fn retained(&self, t: usize) -> bool {
        self.steps.get(t).is_some_and(|s| s.len() == self.boxes[t].tuples)
    }
}

#[derive(Clone, Debug)]
pub struct ReachOptions {
    pub horizon: usize,
    pub delta0: f64,
    pub epsilon: f64,
    /// Stop a cover once one of its tables would exceed this many tuples.
    pub max_tuples: usize,
    pub parallel: bool,
    /// Keep every table; otherwise only the last one plus per-step boxes.
    pub keep_history: bool,
}

impl ReachOptions {
    pub fn new(horizon: usize, delta0: f64, epsilon: f64) -> Self {
        Self { horizon, delta0, epsilon, max_tuples: 1_000_000, parallel: true, keep_history: true }
    }
}

#[derive(Clone, Debug)]
pub struct ReachResult {
    pub options: ReachOptions,
    pub covers: Vec<CoverResult>,
    pub table: IndependenceTable,
    pub norm: Norm,
    pub wall_time: Duration,
    /// Some cover hit the tuple budget before the horizon.
    pub truncated: bool,
}

impl ReachResult {
    /// Last step completed by every cover.
    pub fn completed_steps(&self) -> usize {
        self.covers.iter().map(|c| c.steps.len().saturating_sub(1)).min().unwrap_or(0)
    }

    pub fn explored_per_cover(&self) -> Vec<usize> {
        self.covers.iter().map(CoverResult::explored).collect()
    }

    pub fn explored_total(&self) -> usize {
        self.covers.iter().map(CoverResult::explored).sum()
    }

    /// Every tuple of step `t`, across covers.
    pub fn tuples_at(&self, t: usize) -> impl Iterator<Item = &ReachTuple> + '_ {
        self.covers.iter().filter_map(move |c| c.steps.get(t)).flatten()
    }

    /// Copy with every radius multiplied by `factor`.
    pub fn with_scaled_radii(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for cover in &mut out.covers {
            let dim = cover.center.continuous.len();
            for t in 0..cover.steps.len() {
                if !cover.retained(t) {
                    continue;
                }
                for tuple in &mut cover.steps[t] {
                    tuple.ted.radius *= factor;
                }
                cover.boxes[t] = StepBox::of(&cover.steps[t], dim);
            }
        }
        out
    }
}

/// Reduced exploration from every cover center.
pub fn reach(system: &TransitionSystem, options: &ReachOptions) -> Result<ReachResult> {
    let start = Instant::now();
    if !(options.epsilon >= 0.0) || !options.epsilon.is_finite() {
        return Err(Error::Config(format!("ε must be finite and non-negative, got {}", options.epsilon)));
    }
    let table = IndependenceTable::build(system, options.epsilon)?;
    let betas = system_discrepancies(system)?;
    let mut result = reach_prepared(system, options, table, &betas)?;
    result.wall_time = start.elapsed();
    Ok(result)
}

/// [`reach`] with the independence table and the per-action discrepancies
/// supplied by the caller. The table's ε is used.
pub fn reach_prepared(
    system: &TransitionSystem,
    options: &ReachOptions,
    table: IndependenceTable,
    betas: &[Discrepancy],
) -> Result<ReachResult> {
    let start = Instant::now();
    if table.num_actions() != system.actions.len() || betas.len() != system.actions.len() {
        return Err(Error::Config("table or discrepancies do not match the action set".into()));
    }
    let options = &ReachOptions { epsilon: table.epsilon(), ..options.clone() };
    let centers = delta_cover(system, options.delta0)?;
    log::debug!("{} cover centers, {} independent pairs", centers.len(), table.independent_pairs().len());
    let run = |q0: State| explore(system, q0, options, betas, &table);
    let results: Vec<Result<(CoverResult, bool)>> = if options.parallel {
        centers.into_par_iter().map(run).collect()
    } else {
        centers.into_iter().map(run).collect()
    };
    let mut covers = Vec::with_capacity(results.len());
    let mut truncated = false;
    for r in results {
        let (cover, cut) = r?;
        truncated |= cut;
        covers.push(cover);
    }
    Ok(ReachResult { options: options.clone(), covers, table, norm: system.norm, wall_time: start.elapsed(), truncated })
}

fn explore(
    system: &TransitionSystem,
    q0: State,
    options: &ReachOptions,
    betas: &[Discrepancy],
    table: &IndependenceTable,
) -> Result<(CoverResult, bool)> {
    let dim = q0.continuous.len();
    let root = ReachTuple { state: q0.clone(), ted: TedState::new(options.delta0)? };
    let mut boxes = vec![StepBox::of(std::slice::from_ref(&root), dim)];
    let mut steps = vec![vec![root]];
    let mut factors = Vec::with_capacity(options.horizon);
    for _ in 0..options.horizon {
        let current = steps.last().expect("R_0 exists");
        let mut next = Vec::with_capacity(current.len() * 2);
        let mut seen: BTreeSet<Trace> = BTreeSet::new();
        let mut widest = 0;
        let mut word: Vec<ActionId> = Vec::with_capacity(steps.len());
        for tuple in current {
            let enabled = enabled_actions_ball(system, &tuple.state, tuple.radius());
            widest = widest.max(enabled.len());
            for a in enabled {
                word.clear();
                word.extend_from_slice(tuple.trace());
                word.push(a);
                let key = canonical_key(&word, table);
                if !seen.insert(key) {
                    continue;
                }
                next.push(ReachTuple {
                    state: system.apply(a, &tuple.state)?,
                    ted: tuple.ted.extend(a, options.epsilon, betas, table)?,
                });
            }
            if next.len() > options.max_tuples {
                log::warn!("tuple budget {} exceeded at step {}", options.max_tuples, steps.len());
                return Ok((CoverResult { center: q0, steps, boxes, nominal: NominalCount { factors } }, true));
            }
        }
        factors.push(widest);
        boxes.push(StepBox::of(&next, dim));
        if !options.keep_history {
            if let Some(prev) = steps.last_mut() {
                *prev = Vec::new();
            }
        }
        steps.push(next);
    }
    Ok((CoverResult { center: q0, steps, boxes, nominal: NominalCount { factors } }, false))
}

/// Per-step `(lower, upper)` envelope of one coordinate over all balls.
pub fn reach_bounds(result: &ReachResult, coordinate: usize) -> Result<Vec<(f64, f64)>> {
    let dim = result.covers.first().map_or(0, |c| c.center.continuous.len());
    if coordinate >= dim {
        return Err(Error::Domain(format!("coordinate {coordinate} out of range for dimension {dim}")));
    }
    Ok((0..=result.completed_steps())
        .map(|t| {
            result.covers.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                let b = &c.boxes[t];
                (lo.min(b.lower[coordinate]), hi.max(b.upper[coordinate]))
            })
        })
        .collect())
}

/// Unsafe set as a union of polytopes, checked over a window of steps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SafetyQuery {
    pub regions: Vec<Vec<HalfSpace>>,
    pub from_step: usize,
    pub to_step: Option<usize>,
}

impl SafetyQuery {
    pub fn new(regions: Vec<Vec<HalfSpace>>) -> Self {
        Self { regions, from_step: 0, to_step: None }
    }

    /// Unsafe whenever a listed coordinate reaches `lo` from above or `hi` from below.
    pub fn outside_box(dim: usize, bounds: &[(usize, f64, f64)]) -> Self {
        let mut regions = Vec::new();
        for &(i, lo, hi) in bounds {
            let mut e = DVector::zeros(dim);
            e[i] = 1.0;
            regions.push(vec![HalfSpace::new(e.clone(), lo)]);
            regions.push(vec![HalfSpace::new(-e, -hi)]);
        }
        Self::new(regions)
    }

    pub fn between(mut self, from_step: usize, to_step: Option<usize>) -> Self {
        self.from_step = from_step;
        self.to_step = to_step;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    Safe,
    /// First step, cover and tuple index whose ball meets an unsafe region.
    Unknown { step: usize, cover: usize, tuple: usize },
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Safe => write!(f, "SAFE"),
            Verdict::Unknown { step, cover, tuple } => write!(f, "UNKNOWN (step {step}, cover {cover}, tuple {tuple})"),
        }
    }
}

/// `SAFE` when no ball in the window meets any unsafe polytope. A ball is
/// taken to meet a polytope when it meets each of its half-spaces. Steps whose
/// table was dropped are checked against their hull box instead (tuple index 0).
pub fn check_safety(result: &ReachResult, query: &SafetyQuery) -> Verdict {
    let completed = result.completed_steps();
    let last = query.to_step.map_or(completed, |t| t.min(completed));
    for t in query.from_step..=last {
        for (ci, cover) in result.covers.iter().enumerate() {
            if !cover.retained(t) {
                if query.regions.iter().any(|region| region.iter().all(|h| cover.boxes[t].meets(h))) {
                    return Verdict::Unknown { step: t, cover: ci, tuple: 0 };
                }
                continue;
            }
            for (ti, tuple) in cover.steps[t].iter().enumerate() {
                let hit = query.regions.iter().any(|region| {
                    region
                        .iter()
                        .all(|h| h.intersects_ball(&tuple.state.continuous, tuple.radius(), result.norm))
                });
                if hit {
                    return Verdict::Unknown { step: t, cover: ci, tuple: ti };
                }
            }
        }
    }
    Verdict::Safe
}
