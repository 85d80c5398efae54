//! Brute-force ground truth: exhaustive enumeration, swap closures, random
//! valid executions and soundness audits of reach results.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::discrepancy::Discrepancy;
use crate::error::{Error, Result};
use crate::independence::IndependenceTable;
use crate::lts::{ActionId, InitialSet, Norm, PotentialExecution, State, Trace, TransitionSystem};
use crate::reach::ReachResult;
use crate::ted::ted_for_trace;

pub const DEFAULT_NODE_BUDGET: usize = 10_000_000;
pub const DEFAULT_SWAP_CAP: usize = 8;
/// Slack below which a state counts as outside a ball.
pub const SLACK_TOLERANCE: f64 = -1e-9;

/// Depth-first walk of every valid execution of length `horizon` from `q0`,
/// calling `visit` on each. Returns the number of executions.
pub fn enumerate_executions<F>(
    system: &TransitionSystem,
    q0: &State,
    horizon: usize,
    node_budget: usize,
    mut visit: F,
) -> Result<u64>
where
    F: FnMut(&[ActionId], &[State]),
{
    let mut trace: Vec<ActionId> = Vec::with_capacity(horizon);
    let mut states: Vec<State> = vec![q0.clone()];
    // per depth: enabled actions at that depth and the next one to try
    let mut frames: Vec<(Vec<ActionId>, usize)> = Vec::with_capacity(horizon + 1);
    let mut nodes = 1usize;
    let mut count = 0u64;
    if horizon == 0 {
        visit(&trace, &states);
        return Ok(1);
    }
    frames.push((system.enabled_actions(q0), 0));
    while let Some((enabled, next)) = frames.last_mut() {
        if *next == enabled.len() {
            frames.pop();
            states.pop();
            trace.pop();
            continue;
        }
        let a = enabled[*next];
        *next += 1;
        nodes += 1;
        if nodes > node_budget {
            return Err(Error::Budget { what: "exhaustive enumeration nodes", limit: node_budget });
        }
        let q = system.apply(a, states.last().expect("non-empty"))?;
        trace.push(a);
        states.push(q);
        if trace.len() == horizon {
            count += 1;
            visit(&trace, &states);
            trace.pop();
            states.pop();
        } else {
            let en = system.enabled_actions(states.last().expect("non-empty"));
            frames.push((en, 0));
        }
    }
    Ok(count)
}

pub fn collect_executions(
    system: &TransitionSystem,
    q0: &State,
    horizon: usize,
    node_budget: usize,
) -> Result<Vec<PotentialExecution>> {
    let mut out = Vec::new();
    enumerate_executions(system, q0, horizon, node_budget, |trace, states| {
        out.push(PotentialExecution { trace: Trace::new(trace.to_vec()), states: states.to_vec() });
    })?;
    Ok(out)
}

/// Every valid trace of length at most `horizon` from `q0`, shortest first.
pub fn valid_traces_up_to(system: &TransitionSystem, q0: &State, horizon: usize, node_budget: usize) -> Result<Vec<Trace>> {
    let mut out = Vec::new();
    for len in 0..=horizon {
        enumerate_executions(system, q0, len, node_budget, |trace, _| out.push(Trace::new(trace.to_vec())))?;
    }
    Ok(out)
}

/// Equivalence class of `trace` by breadth-first adjacent swaps of independent pairs.
pub fn swap_closure(trace: &[ActionId], table: &IndependenceTable, cap: usize) -> Result<BTreeSet<Trace>> {
    if trace.len() > cap {
        return Err(Error::Budget { what: "swap closure trace length", limit: cap });
    }
    let start = Trace::new(trace.to_vec());
    let mut seen = BTreeSet::from([start.clone()]);
    let mut queue = VecDeque::from([start]);
    while let Some(t) = queue.pop_front() {
        for i in 0..t.len().saturating_sub(1) {
            if t[i] != t[i + 1] && table.independent(t[i], t[i + 1]) {
                let mut v = t.to_vec();
                v.swap(i, i + 1);
                let v = Trace::new(v);
                if seen.insert(v.clone()) {
                    queue.push_back(v);
                }
            }
        }
    }
    Ok(seen)
}

/// Uniform point of the initial set.
pub fn sample_initial(set: &InitialSet, norm: Norm, rng: &mut impl Rng) -> DVector<f64> {
    match set {
        InitialSet::Box { lower, upper } => DVector::from_fn(lower.len(), |i, _| {
            if upper[i] > lower[i] {
                rng.random_range(lower[i]..=upper[i])
            } else {
                lower[i]
            }
        }),
        InitialSet::Ball { center, radius } => center + sample_ball(center.len(), *radius, norm, rng),
    }
}

/// Uniform point of the ball of the given radius around the origin.
pub fn sample_ball(dim: usize, radius: f64, norm: Norm, rng: &mut impl Rng) -> DVector<f64> {
    match norm {
        Norm::Linf => DVector::from_fn(dim, |_, _| rng.random_range(-radius..=radius)),
        Norm::L2 => {
            // Box–Muller direction, radius scaled by u^(1/d)
            let g = DVector::from_fn(dim, |_, _| {
                let u1: f64 = 1.0 - rng.random::<f64>();
                let u2: f64 = rng.random();
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            });
            let len = g.norm();
            if len == 0.0 {
                return DVector::zeros(dim);
            }
            let scale = radius * rng.random::<f64>().powf(1.0 / dim as f64) / len;
            g * scale
        }
    }
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub execution: PotentialExecution,
    /// Step at which no action was enabled, if the run stopped early.
    pub dead_at: Option<usize>,
}

/// `n` valid executions of up to `horizon` steps: uniform start in `Θ`, then a
/// uniform choice among enabled actions. Sample `i` uses stream `i` of the seed.
pub fn random_valid_executions(system: &TransitionSystem, horizon: usize, n: usize, seed: u64) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::Domain("at least one sample is required".into()));
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let x = sample_initial(&system.initial_set, system.norm, &mut rng);
            let mut q = system.initial_state(x);
            let mut trace = Trace::empty();
            let mut states = vec![q.clone()];
            let mut dead_at = None;
            for t in 0..horizon {
                let en = system.enabled_actions(&q);
                if en.is_empty() {
                    dead_at = Some(t);
                    break;
                }
                let a = en[rng.random_range(0..en.len())];
                q = system.apply(a, &q)?;
                trace.push(a);
                states.push(q.clone());
            }
            Ok(Sample { execution: PotentialExecution { trace, states }, dead_at })
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    pub checked: usize,
    pub min_slack: f64,
    pub violations: usize,
    /// Sample index and slack of the worst violation.
    pub worst: Option<(usize, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SoundnessReport {
    pub steps: Vec<StepReport>,
    pub dead_samples: usize,
}

impl SoundnessReport {
    pub fn violations(&self) -> usize {
        self.steps.iter().map(|s| s.violations).sum()
    }

    pub fn checked(&self) -> usize {
        self.steps.iter().map(|s| s.checked).sum()
    }

    pub fn min_slack(&self) -> f64 {
        self.steps.iter().filter(|s| s.checked > 0).map(|s| s.min_slack).fold(f64::INFINITY, f64::min)
    }

    pub fn passed(&self) -> bool {
        self.violations() == 0
    }
}

impl fmt::Display for SoundnessReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "verdict: {}", if self.passed() { "PASS" } else { "FAIL" })?;
        writeln!(f, "states checked: {}", self.checked())?;
        writeln!(f, "violations: {}", self.violations())?;
        writeln!(f, "min slack: {:.6e}", self.min_slack())?;
        writeln!(f, "dead samples: {}", self.dead_samples)?;
        writeln!(f, "step,checked,min_slack,violations,worst_sample")?;
        for (t, s) in self.steps.iter().enumerate() {
            let worst = s.worst.map_or(String::from("-"), |(i, _)| i.to_string());
            writeln!(f, "{t},{},{:.6e},{},{worst}", s.checked, s.min_slack, s.violations)?;
        }
        Ok(())
    }
}

/// Every sampled state at step `t` must lie in some ball of `R_t` (or in the hull
/// box of a cover whose table for `t` was dropped).
pub fn validate_soundness(result: &ReachResult, samples: &[Sample]) -> SoundnessReport {
    let steps = result.completed_steps();
    let per_step: Vec<StepReport> = (0..=steps)
        .into_par_iter()
        .map(|t| {
            let balls: Vec<_> = result.tuples_at(t).collect();
            let hulls: Vec<_> = result.covers.iter().filter(|c| !c.retained(t)).map(|c| &c.boxes[t]).collect();
            let mut report = StepReport { min_slack: f64::INFINITY, ..StepReport::default() };
            for (i, s) in samples.iter().enumerate() {
                let Some(q) = s.execution.states.get(t) else { continue };
                let in_hull = hulls.iter().map(|b| {
                    let x = &q.continuous;
                    (0..x.len()).map(|k| (x[k] - b.lower[k]).min(b.upper[k] - x[k])).fold(f64::INFINITY, f64::min)
                });
                let slack = balls
                    .iter()
                    .map(|b| b.ball().slack(q, result.norm))
                    .chain(in_hull)
                    .fold(f64::NEG_INFINITY, f64::max);
                report.checked += 1;
                report.min_slack = report.min_slack.min(slack);
                if slack < SLACK_TOLERANCE {
                    report.violations += 1;
                    if report.worst.is_none_or(|(_, w)| slack < w) {
                        report.worst = Some((i, slack));
                    }
                }
            }
            report
        })
        .collect();
    SoundnessReport { steps: per_step, dead_samples: samples.iter().filter(|s| s.dead_at.is_some()).count() }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TedAudit {
    pub anchors: usize,
    pub related: usize,
    pub violations: usize,
    pub min_slack: f64,
}

/// For each anchor trace: every trace of its class, started from each of
/// `offsets` (all within `δ0` of `q0`), must end inside the ball of radius
/// `scale · ted_for_trace` around the anchor's last state, with the same
/// discrete part.
#[allow(clippy::too_many_arguments)]
pub fn audit_ted(
    system: &TransitionSystem,
    table: &IndependenceTable,
    betas: &[Discrepancy],
    q0: &State,
    traces: &[Trace],
    delta0: f64,
    offsets: &[DVector<f64>],
    scale: f64,
) -> Result<TedAudit> {
    let epsilon = table.epsilon();
    let audits: Vec<Result<TedAudit>> = traces
        .par_iter()
        .map(|anchor| {
            let radius = scale * ted_for_trace(anchor, delta0, epsilon, betas, table)?;
            let end = system.last_state(q0, anchor)?;
            let mut audit = TedAudit { anchors: 1, min_slack: f64::INFINITY, ..TedAudit::default() };
            for other in swap_closure(anchor, table, anchor.len().max(DEFAULT_SWAP_CAP))? {
                for off in offsets {
                    let start = State::new(q0.discrete.clone(), &q0.continuous + off);
                    let last = system.last_state(&start, &other)?;
                    audit.related += 1;
                    let slack = if last.discrete == end.discrete {
                        radius - system.norm.distance(&last.continuous, &end.continuous)
                    } else {
                        f64::NEG_INFINITY
                    };
                    audit.min_slack = audit.min_slack.min(slack);
                    if slack < SLACK_TOLERANCE {
                        audit.violations += 1;
                    }
                }
            }
            Ok(audit)
        })
        .collect();
    let mut total = TedAudit { min_slack: f64::INFINITY, ..TedAudit::default() };
    for a in audits {
        let a = a?;
        total.anchors += a.anchors;
        total.related += a.related;
        total.violations += a.violations;
        total.min_slack = total.min_slack.min(a.min_slack);
    }
    Ok(total)
}

/// Offsets within `δ0`: the origin, `±δ0` along each axis, then uniform samples.
pub fn related_offsets(dim: usize, delta0: f64, norm: Norm, random: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut out = vec![DVector::zeros(dim)];
    for i in 0..dim {
        for sign in [1.0, -1.0] {
            let mut e = DVector::zeros(dim);
            e[i] = sign * delta0;
            out.push(e);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    out.extend((0..random).map(|_| sample_ball(dim, delta0, norm, &mut rng)));
    out
}

/// Index of `trace` among all traces of its length over `n` letters. Numeric
/// order of indices is lexicographic order of traces.
pub fn trace_index(trace: &[ActionId], n: usize) -> usize {
    trace.iter().fold(0, |acc, &a| acc * n + a)
}

/// Inverse of [`trace_index`].
pub fn trace_at(mut index: usize, n: usize, len: usize) -> Trace {
    let mut v = vec![0; len];
    for slot in v.iter_mut().rev() {
        *slot = index % n;
        index /= n;
    }
    Trace::new(v)
}

/// Connected components of the adjacent-swap graph on every trace of length
/// `len`: entry `i` is the index of the lexicographically smallest trace in the
/// class of trace `i`.
pub fn swap_classes(table: &IndependenceTable, len: usize, budget: usize) -> Result<Vec<u32>> {
    let n = table.num_actions();
    let size = (0..len).try_fold(1usize, |acc, _| acc.checked_mul(n)).filter(|s| *s <= budget.min(u32::MAX as usize));
    let size = size.ok_or(Error::Budget { what: "swap class traces", limit: budget })?;
    let mut parent: Vec<u32> = (0..size as u32).collect();
    fn find(parent: &mut [u32], mut x: u32) -> u32 {
        while parent[x as usize] != x {
            let up = parent[parent[x as usize] as usize];
            parent[x as usize] = up;
            x = up;
        }
        x
    }
    let weights: Vec<usize> = (0..len).map(|i| n.pow((len - 1 - i) as u32)).collect();
    for idx in 0..size {
        let t = trace_at(idx, n, len);
        for i in 0..len.saturating_sub(1) {
            let (a, b) = (t[i], t[i + 1]);
            if a == b || !table.independent(a, b) {
                continue;
            }
            // swapping a·b into b·a at positions i, i+1
            let other = idx + b * weights[i] + a * weights[i + 1] - a * weights[i] - b * weights[i + 1];
            let (x, y) = (find(&mut parent, idx as u32), find(&mut parent, other as u32));
            if x != y {
                // the smaller index stays the root, so roots are class minima
                parent[x.max(y) as usize] = x.min(y);
            }
        }
    }
    Ok((0..size as u32).map(|i| find(&mut parent, i)).collect())
}

/// Disagreements between the fast trace operations and the swap-graph classes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TraceOpsAudit {
    pub traces: usize,
    /// Traces whose class was also rebuilt by [`swap_closure`].
    pub closures: usize,
    pub mismatches: usize,
    /// First few disagreements, for the report.
    pub examples: Vec<String>,
}

/// Exhaustively compares `canonical_key`, `trace_equivalent` and `eep` with
/// [`swap_classes`] on every trace of length `0..=max_len`; `eep(τ, a)` must be
/// the least last position of `a` over the class of `τa`. Classes of lengths
/// with at most `closure_limit` traces are additionally rebuilt by BFS.
pub fn audit_trace_operations(
    table: &IndependenceTable,
    max_len: usize,
    budget: usize,
    closure_limit: usize,
) -> Result<TraceOpsAudit> {
    use crate::independence::{canonical_key, eep, trace_equivalent};
    let n = table.num_actions();
    let mut audit = TraceOpsAudit::default();
    for len in 0..=max_len {
        let classes = swap_classes(table, len, budget)?;
        let bfs = classes.len() <= closure_limit;
        // last_pos[root·n + x]: least last position of x over the class of root
        let mut last_pos = vec![u8::MAX; classes.len() * n];
        for (idx, &root) in classes.iter().enumerate() {
            let t = trace_at(idx, n, len);
            for (k, &x) in t.iter().enumerate() {
                let slot = &mut last_pos[root as usize * n + x];
                if t[k + 1..].iter().all(|&y| y != x) {
                    *slot = (*slot).min(k as u8);
                }
            }
        }
        let mut sizes = vec![0u32; if bfs { classes.len() } else { 0 }];
        if bfs {
            for &r in &classes {
                sizes[r as usize] += 1;
            }
        }
        let found: Vec<(usize, Vec<String>)> = (0..classes.len())
            .into_par_iter()
            .map(|idx| {
                let t = trace_at(idx, n, len);
                let mut bad = Vec::new();
                let key = canonical_key(&t, table);
                if trace_index(&key, n) != classes[idx] as usize {
                    bad.push(format!("canonical_key({t:?}) = {key:?}"));
                }
                let rep = trace_at(classes[idx] as usize, n, len);
                if !trace_equivalent(&t, &rep, table) {
                    bad.push(format!("trace_equivalent({t:?}, {rep:?}) = false"));
                }
                for i in 0..len {
                    for j in i + 1..len {
                        if t[i] == t[j] {
                            continue;
                        }
                        let mut v = t.to_vec();
                        v.swap(i, j);
                        let same = classes[trace_index(&v, n)] == classes[idx];
                        if trace_equivalent(&t, &v, table) != same {
                            bad.push(format!("trace_equivalent({t:?}, {v:?}) != {same}"));
                        }
                    }
                }
                if len > 0 {
                    let (prefix, a) = (&t[..len - 1], t[len - 1]);
                    let expect = last_pos[classes[idx] as usize * n + a] as usize;
                    let got = eep(prefix, a, table);
                    if got != expect {
                        bad.push(format!("eep({prefix:?}, {a}) = {got}, expected {expect}"));
                    }
                }
                let mut closures = 0;
                if bfs && classes[idx] as usize == idx {
                    closures = 1;
                    match swap_closure(&t, table, len.max(DEFAULT_SWAP_CAP)) {
                        Ok(c) => {
                            if c.len() != sizes[idx] as usize || c.iter().any(|m| classes[trace_index(m, n)] as usize != idx) {
                                bad.push(format!("swap_closure({t:?}) disagrees with the class partition"));
                            }
                        }
                        Err(e) => bad.push(e.to_string()),
                    }
                }
                (closures, bad)
            })
            .collect();
        for (c, bad) in found {
            audit.traces += 1;
            audit.closures += c;
            audit.mismatches += bad.len();
            for b in bad {
                if audit.examples.len() < 5 {
                    audit.examples.push(b);
                }
            }
        }
    }
    Ok(audit)
}

/// Outcome of a randomized inequality check: the bound minus the observed
/// distance, minimized over all instances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundCheck {
    pub checked: usize,
    pub min_slack: f64,
}

impl BoundCheck {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.min_slack >= SLACK_TOLERANCE
    }
}

/// Center and radius of the region random states are drawn from: the
/// invariant ball when one is declared, otherwise a neighbourhood of `Θ`.
fn state_region(system: &TransitionSystem) -> (DVector<f64>, f64) {
    match system.invariant_radius {
        Some(r) => (DVector::zeros(system.dimension), r),
        None => {
            let c = system.initial_set.center();
            let spread = match &system.initial_set {
                InitialSet::Ball { radius, .. } => *radius,
                InitialSet::Box { lower, upper } => system.norm.length(&(upper - lower)) / 2.0,
            };
            (c, 4.0 * spread.max(1.0))
        }
    }
}

fn random_state(system: &TransitionSystem, rng: &mut ChaCha8Rng) -> State {
    let valuations = system.discrete_valuations();
    let l = valuations[rng.random_range(0..valuations.len())].clone();
    let (c, r) = state_region(system);
    State::new(l, c + sample_ball(system.dimension, r, system.norm, rng))
}

fn merge(checks: Vec<Result<BoundCheck>>) -> Result<BoundCheck> {
    let mut total = BoundCheck { checked: 0, min_slack: f64::INFINITY };
    for c in checks {
        let c = c?;
        total.checked += c.checked;
        total.min_slack = total.min_slack.min(c.min_slack);
    }
    Ok(total)
}

/// For random ε-independent `(a, b)` and random `q, q′` sharing their discrete
/// part: `|ba(q).X − ab(q′).X| ≤ β_b(β_a(|q.X − q′.X|)) + ε`.
pub fn check_swapped_pairs(
    system: &TransitionSystem,
    table: &IndependenceTable,
    betas: &[Discrepancy],
    instances: usize,
    seed: u64,
) -> Result<BoundCheck> {
    let pairs = table.independent_pairs();
    if pairs.is_empty() {
        return Err(Error::Domain("no ε-independent pair to check".into()));
    }
    let (center, region) = state_region(system);
    let norm = system.norm;
    let checks = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let (mut a, mut b) = pairs[rng.random_range(0..pairs.len())];
            if rng.random::<bool>() {
                std::mem::swap(&mut a, &mut b);
            }
            let q = random_state(system, &mut rng);
            let x2 = loop {
                let x = &q.continuous + sample_ball(system.dimension, region / 4.0, norm, &mut rng);
                if norm.distance(&x, &center) <= region {
                    break x;
                }
            };
            let q2 = State::new(q.discrete.clone(), x2);
            let ba = system.last_state(&q, &[a, b])?;
            let ab = system.last_state(&q2, &[b, a])?;
            let bound = betas[b].eval(betas[a].eval(norm.distance(&q.continuous, &q2.continuous))) + table.epsilon();
            let slack = if ba.discrete == ab.discrete {
                bound - norm.distance(&ba.continuous, &ab.continuous)
            } else {
                f64::NEG_INFINITY
            };
            Ok(BoundCheck { checked: 1, min_slack: slack })
        })
        .collect();
    merge(checks)
}

/// For random `a` and random `τ` whose every action is ε-independent of `a`:
/// moving `a` from the end to the front of `τa` moves the last state by at
/// most `γ_{len(τ)−1}(ε)`, with `γ` built from the discrepancies of `τ`.
pub fn check_moved_action(
    system: &TransitionSystem,
    table: &IndependenceTable,
    betas: &[Discrepancy],
    instances: usize,
    max_len: usize,
    seed: u64,
) -> Result<BoundCheck> {
    let n = table.num_actions();
    let partners: Vec<(ActionId, Vec<ActionId>)> = (0..n)
        .map(|a| (a, (0..n).filter(|&b| table.independent(a, b)).collect::<Vec<_>>()))
        .filter(|(_, p)| !p.is_empty())
        .collect();
    if partners.is_empty() || max_len == 0 {
        return Err(Error::Domain("no ε-independent pair to check".into()));
    }
    let norm = system.norm;
    let checks = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let (a, others) = &partners[rng.random_range(0..partners.len())];
            let len = rng.random_range(1..=max_len);
            let tau: Vec<ActionId> = (0..len).map(|_| others[rng.random_range(0..others.len())]).collect();
            let q0 = random_state(system, &mut rng);
            let mut end = tau.clone();
            end.push(*a);
            let mut front = vec![*a];
            front.extend_from_slice(&tau);
            let x = system.last_state(&q0, &end)?;
            let y = system.last_state(&q0, &front)?;
            let beta = crate::discrepancy::beta_max(tau.iter().map(|&c| &betas[c]))?;
            let bound = crate::discrepancy::gamma(len - 1, table.epsilon(), &beta)?;
            let slack = if x.discrete == y.discrete {
                bound - norm.distance(&x.continuous, &y.continuous)
            } else {
                f64::NEG_INFINITY
            };
            Ok(BoundCheck { checked: 1, min_slack: slack })
        })
        .collect();
    merge(checks)
}
