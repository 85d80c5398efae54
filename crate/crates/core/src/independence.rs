//! ε-independence of affine actions and the trace relations built on it.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::DVector;

use crate::discrepancy::induced_norm;
use crate::error::{Error, Result};
use crate::lts::{ActionId, DiscreteState, Offset, Trace, TransitionSystem};

/// Bound on `|ab(q).X − ba(q).X|`, or `Dependent` when the discrete effects do not commute.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bound {
    Dependent,
    Value(f64),
}

impl Bound {
    pub fn value(self) -> Option<f64> {
        match self {
            Bound::Value(v) => Some(v),
            Bound::Dependent => None,
        }
    }
}

/// State-independent commutation bound for `a` followed by `b` versus `b` followed by `a`.
///
/// `valuations` is the discrete domain to enumerate; `r_inv` bounds `|q.X|` over
/// the states of interest and is required only when `A_a` and `A_b` do not commute.
pub fn commutation_bound(
    system: &TransitionSystem,
    a: ActionId,
    b: ActionId,
    r_inv: Option<f64>,
    valuations: &[DiscreteState],
) -> Result<Bound> {
    let (act_a, act_b) = (system.action(a), system.action(b));
    let norm = system.norm;
    let mut sup: f64 = 0.0;
    for l in valuations {
        let after_a = act_a.update.apply(l)?;
        let after_b = act_b.update.apply(l)?;
        if act_b.update.apply(&after_a)? != act_a.update.apply(&after_b)? {
            return Ok(Bound::Dependent);
        }
        let v: DVector<f64> = &act_b.matrix * act_a.offset_at(l)? + act_b.offset_at(&after_a)?
            - &act_a.matrix * act_b.offset_at(l)?
            - act_a.offset_at(&after_b)?;
        sup = sup.max(norm.length(&v));
    }
    let commutator = &act_b.matrix * &act_a.matrix - &act_a.matrix * &act_b.matrix;
    let c = induced_norm(&commutator, norm)?;
    if c > 0.0 {
        let r = r_inv.ok_or_else(|| {
            Error::Config(format!(
                "actions `{}` and `{}` have non-commuting matrices; an invariant radius is required",
                act_a.name, act_b.name
            ))
        })?;
        sup += c * r;
    }
    Ok(Bound::Value(sup))
}

/// Check that the declared invariant radius follows from non-expansion: every
/// action has `|A| ≤ 1` and a zero offset, and `Θ` lies inside the radius.
pub fn certify_invariant_radius(system: &TransitionSystem) -> Result<()> {
    let r = system
        .invariant_radius
        .ok_or_else(|| Error::Config("no invariant radius declared".into()))?;
    for a in &system.actions {
        if induced_norm(&a.matrix, system.norm)? > 1.0 + 1e-12 {
            return Err(Error::Config(format!("invariant certificate fails: `{}` is expanding", a.name)));
        }
        let zero = match &a.offset {
            Offset::Constant(b) => b.iter().all(|x| *x == 0.0),
            Offset::Table(t) => t.values().all(|b| b.iter().all(|x| *x == 0.0)),
            Offset::Linear { constant, terms, .. } => {
                constant.iter().all(|x| *x == 0.0) && terms.iter().all(|(_, c)| c.iter().all(|x| *x == 0.0))
            }
        };
        if !zero {
            return Err(Error::Config(format!("invariant certificate fails: `{}` has a non-zero offset", a.name)));
        }
    }
    let sup = system.initial_set.sup_norm(system.norm);
    if sup > r {
        return Err(Error::Config(format!("invariant certificate fails: initial set reaches norm {sup} > {r}")));
    }
    Ok(())
}

/// Symmetric pairwise bound matrix with an ε threshold. The diagonal is always dependent.
#[derive(Clone, Debug, PartialEq)]
pub struct IndependenceTable {
    n: usize,
    epsilon: f64,
    bounds: Vec<Option<f64>>,
    independent: Vec<bool>,
    /// Row `a`: bit `b` set when `b` is dependent on `a`. Only for at most 64 actions.
    dependent_bits: Option<Vec<u64>>,
}

impl IndependenceTable {
    pub fn build(system: &TransitionSystem, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::Domain(format!("ε must be finite and non-negative, got {epsilon}")));
        }
        if system.invariant_radius.is_some() {
            if system.certify_invariant {
                certify_invariant_radius(system)?;
            } else {
                log::warn!("trusting the declared invariant radius without a certificate");
            }
        }
        let valuations = system.discrete_valuations();
        let n = system.actions.len();
        let mut bounds = vec![None; n * n];
        for a in 0..n {
            for b in a + 1..n {
                let v = commutation_bound(system, a, b, system.invariant_radius, &valuations)?.value();
                bounds[a * n + b] = v;
                bounds[b * n + a] = v;
            }
        }
        Ok(Self::from_bounds(n, epsilon, bounds))
    }

    fn from_bounds(n: usize, epsilon: f64, bounds: Vec<Option<f64>>) -> Self {
        let independent: Vec<bool> = bounds.iter().map(|b| matches!(b, Some(v) if *v <= epsilon)).collect();
        let dependent_bits = (n <= 64).then(|| {
            (0..n)
                .map(|a| (0..n).filter(|&b| !independent[a * n + b]).fold(0u64, |m, b| m | 1 << b))
                .collect()
        });
        Self { n, epsilon, bounds, independent, dependent_bits }
    }

    /// Table over `n` actions with the given independent pairs, all at bound 0.
    pub fn from_independent_pairs(n: usize, pairs: &[(ActionId, ActionId)]) -> Self {
        let mut bounds = vec![None; n * n];
        for &(a, b) in pairs {
            if a != b {
                bounds[a * n + b] = Some(0.0);
                bounds[b * n + a] = Some(0.0);
            }
        }
        Self::from_bounds(n, 0.0, bounds)
    }

    /// Same bounds, new threshold.
    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self::from_bounds(self.n, epsilon, self.bounds.clone())
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn num_actions(&self) -> usize {
        self.n
    }

    pub fn bound(&self, a: ActionId, b: ActionId) -> Bound {
        match self.bounds[a * self.n + b] {
            Some(v) => Bound::Value(v),
            None => Bound::Dependent,
        }
    }

    #[inline]
    pub fn independent(&self, a: ActionId, b: ActionId) -> bool {
        self.independent[a * self.n + b]
    }

    /// Unordered independent pairs `(a, b)` with `a < b`.
    pub fn independent_pairs(&self) -> Vec<(ActionId, ActionId)> {
        (0..self.n)
            .flat_map(|a| (a + 1..self.n).map(move |b| (a, b)))
            .filter(|&(a, b)| self.independent(a, b))
            .collect()
    }

    /// CSV with one row per ordered pair: `row,column,bound` (bound or `DEP`).
    pub fn to_csv(&self, system: &TransitionSystem) -> String {
        let mut out = String::from("row,column,bound\n");
        for a in 0..self.n {
            for b in 0..self.n {
                let cell = match self.bound(a, b) {
                    Bound::Value(v) => format!("{v:.9}"),
                    Bound::Dependent => "DEP".to_string(),
                };
                let _ = writeln!(out, "{},{},{}", system.actions[a].name, system.actions[b].name, cell);
            }
        }
        out
    }
}

/// Earliest equivalent position of `a` on `trace`: the length of the shortest
/// prefix after which `a` can be placed within the equivalence class of `trace·a`.
pub fn eep(trace: &[ActionId], a: ActionId, table: &IndependenceTable) -> usize {
    if let Some(rows) = &table.dependent_bits {
        let mut blocked = rows[a];
        let mut kept = 0;
        for &t in trace.iter().rev() {
            if blocked >> t & 1 == 1 {
                kept += 1;
                blocked |= rows[t];
            }
        }
        return kept;
    }
    // blocked[x]: x is dependent on some member of φ·a
    let mut blocked: Vec<bool> = (0..table.n).map(|x| !table.independent(x, a)).collect();
    let mut kept = 0;
    for &t in trace.iter().rev() {
        if blocked[t] {
            kept += 1;
            for (x, flag) in blocked.iter_mut().enumerate() {
                if !table.independent(x, t) {
                    *flag = true;
                }
            }
        }
    }
    kept
}

/// Projection test: equal multisets and, for every dependent pair, identical
/// subsequences of occurrences of that pair.
pub fn trace_equivalent(t1: &[ActionId], t2: &[ActionId], table: &IndependenceTable) -> bool {
    if t1.len() != t2.len() {
        return false;
    }
    let mut c1 = vec![0usize; table.n];
    let mut c2 = vec![0usize; table.n];
    for (&x, &y) in t1.iter().zip(t2) {
        c1[x] += 1;
        c2[y] += 1;
    }
    if c1 != c2 {
        return false;
    }
    let present: Vec<ActionId> = (0..table.n).filter(|&x| c1[x] > 0).collect();
    for (i, &a) in present.iter().enumerate() {
        for &b in &present[i + 1..] {
            if table.independent(a, b) {
                continue;
            }
            let p1 = t1.iter().filter(|&&x| x == a || x == b);
            let p2 = t2.iter().filter(|&&x| x == a || x == b);
            if !p1.eq(p2) {
                return false;
            }
        }
    }
    true
}

/// Lexicographically least trace of the equivalence class, under the action order.
pub fn canonical_key(trace: &[ActionId], table: &IndependenceTable) -> Trace {
    if let (true, Some(rows)) = (trace.len() <= 64, &table.dependent_bits) {
        return canonical_key_short(trace, rows);
    }
    const TAKEN: usize = usize::MAX;
    let n = trace.len();
    // blockers[j]: earlier positions not yet emitted that are dependent on trace[j]
    let mut blockers = vec![0usize; n];
    for j in 0..n {
        blockers[j] = (0..j).filter(|&i| !table.independent(trace[i], trace[j])).count();
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut pick = TAKEN;
        for j in 0..n {
            if blockers[j] == 0 && (pick == TAKEN || trace[j] < trace[pick]) {
                pick = j;
            }
        }
        debug_assert!(pick != TAKEN, "the first remaining position is never blocked");
        blockers[pick] = TAKEN;
        out.push(trace[pick]);
        for j in pick + 1..n {
            if blockers[j] != TAKEN && !table.independent(trace[pick], trace[j]) {
                blockers[j] -= 1;
            }
        }
    }
    Trace::new(out)
}

/// Same greedy choice with positions and actions as bits.
fn canonical_key_short(trace: &[ActionId], rows: &[u64]) -> Trace {
    let n = trace.len();
    // at[x]: positions seen so far holding action x; preds[j]: earlier positions dependent on trace[j]
    let mut at = [0u64; 64];
    let mut preds = [0u64; 64];
    for (j, &x) in trace.iter().enumerate() {
        let mut deps = rows[x];
        while deps != 0 {
            let y = deps.trailing_zeros() as usize;
            deps &= deps - 1;
            preds[j] |= at[y];
        }
        at[x] |= 1 << j;
    }
    let mut left: u64 = if n == 64 { u64::MAX } else { (1 << n) - 1 };
    let mut out = Vec::with_capacity(n);
    while left != 0 {
        let mut pick = usize::MAX;
        let mut bits = left;
        while bits != 0 {
            let j = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            if preds[j] & left == 0 && (pick == usize::MAX || trace[j] < trace[pick]) {
                pick = j;
            }
        }
        left &= !(1 << pick);
        out.push(trace[pick]);
    }
    Trace::new(out)
}

/// Distinct actions of a trace, in action order.
pub fn alphabet(trace: &[ActionId]) -> BTreeSet<ActionId> {
    trace.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use crate::oracle::swap_closure;
    use proptest::prelude::*;

    fn consensus_table(eps: f64) -> (crate::models::ModelPreset, IndependenceTable) {
        let preset = models::build_consensus_default();
        let table = IndependenceTable::build(&preset.system, eps).unwrap();
        (preset, table)
    }

    #[test]
    fn consensus_bounds() {
        let (p, t) = consensus_table(0.1);
        let id = |n| p.system.action_id(n).unwrap();
        let b = |x, y| t.bound(id(x), id(y)).value().unwrap();
        assert!((b("a0", "a1") - 0.097_979_589_711_327_1).abs() < 1e-9);
        assert!((b("a0", "a2") - 0.069_282_032_302_755_1).abs() < 1e-9);
        assert!((b("a1", "a2") - 0.169_705_627_484_771_4).abs() < 1e-9);
        for x in ["a0", "a1", "a2"] {
            assert_eq!(t.bound(id(x), id("abot")), Bound::Dependent);
        }
    }

    #[test]
    fn consensus_independent_pairs_by_epsilon() {
        let (p, t) = consensus_table(0.1);
        let id = |n| p.system.action_id(n).unwrap();
        assert_eq!(t.independent_pairs(), vec![(id("a0"), id("a1")), (id("a0"), id("a2"))]);
        let t2 = t.with_epsilon(0.2);
        assert_eq!(t2.independent_pairs().len(), 3);
        assert_eq!(t2, IndependenceTable::build(&p.system, 0.2).unwrap());
        assert!(t.with_epsilon(0.0).independent_pairs().is_empty());
    }

    #[test]
    fn tables_are_symmetric_with_dependent_diagonal() {
        for preset in models::all_presets() {
            let t = IndependenceTable::build(&preset.system, preset.epsilon).unwrap();
            for a in 0..t.num_actions() {
                assert_eq!(t.bound(a, a), Bound::Dependent);
                for b in 0..t.num_actions() {
                    assert_eq!(t.bound(a, b), t.bound(b, a));
                }
            }
        }
    }

    #[test]
    fn shared_matrix_bound_is_closed_form() {
        // (A − I)(b_b − b_a) for two platoon joint actions
        let p = models::build_platoon_scenario("platoon2-60").unwrap();
        let sys = &p.system;
        let a = sys.action_id("aa").unwrap();
        let b = sys.action_id("bb").unwrap();
        let bound = commutation_bound(sys, a, b, None, &sys.discrete_valuations()).unwrap();
        assert!((bound.value().unwrap() - 0.08f64.sqrt()).abs() < 1e-12);
        let c = sys.action_id("cc").unwrap();
        let half = commutation_bound(sys, b, c, None, &sys.discrete_valuations()).unwrap();
        assert!((half.value().unwrap() - 0.02f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn identical_actions_commute_exactly() {
        let p = models::build_consensus_default();
        let mut sys = p.system.clone();
        let mut twin = sys.actions[0].clone();
        twin.name = "twin".into();
        twin.update = crate::lts::DiscreteUpdate::Assign(vec![]);
        sys.actions[0].update = crate::lts::DiscreteUpdate::Assign(vec![]);
        sys.actions.push(twin);
        let n = sys.actions.len();
        let bound = commutation_bound(&sys, 0, n - 1, None, &sys.discrete_valuations()).unwrap();
        assert_eq!(bound, Bound::Value(0.0));
    }

    #[test]
    fn missing_invariant_radius_is_config_error() {
        let p = models::build_consensus_default();
        let mut sys = p.system.clone();
        sys.invariant_radius = None;
        assert!(matches!(IndependenceTable::build(&sys, 0.1), Err(Error::Config(_))));
    }

    #[test]
    fn heating_cross_room_bounds() {
        let p = models::build_heating_default();
        let t = IndependenceTable::build(&p.system, 0.6).unwrap();
        let sys = &p.system;
        let flow = sys.action_id("flow").unwrap();
        for i in 0..3 {
            for j in 0..3 {
                for x in ["on", "off"] {
                    for y in ["on", "off"] {
                        let a = sys.action_id(&format!("{x}{i}")).unwrap();
                        let b = sys.action_id(&format!("{y}{j}")).unwrap();
                        if a == b {
                            continue;
                        }
                        match t.bound(a, b) {
                            Bound::Value(v) => {
                                assert_ne!(i, j);
                                assert!(v <= 0.4 * 2f64.sqrt() + 1e-12, "{x}{i} {y}{j} {v}");
                            }
                            Bound::Dependent => assert_eq!(i, j),
                        }
                    }
                }
                assert_eq!(t.bound(flow, sys.action_id(&format!("on{i}")).unwrap()), Bound::Dependent);
            }
        }
    }

    #[test]
    fn eep_examples() {
        let (p, t) = consensus_table(0.1);
        let tr = p.system.trace(&["abot", "a0", "a1"]).unwrap();
        let a2 = p.system.action_id("a2").unwrap();
        assert_eq!(eep(&tr, a2, &t), 2);
        assert_eq!(eep(&[], a2, &t), 0);
        let abot = p.system.action_id("abot").unwrap();
        let all = p.system.trace(&["a0", "a1", "a2", "a0"]).unwrap();
        assert_eq!(eep(&all, abot, &t), 4);
        let indep = IndependenceTable::from_independent_pairs(3, &[(0, 1), (0, 2), (1, 2)]);
        assert_eq!(eep(&[1, 2], 0, &indep), 0);
    }

    #[test]
    fn trace_equivalence_examples() {
        let (p, t) = consensus_table(0.1);
        let tr = |xs: &[&str]| p.system.trace(xs).unwrap();
        let x = tr(&["a0", "a1", "a2", "abot"]);
        assert!(trace_equivalent(&x, &x, &t));
        assert!(trace_equivalent(&x, &tr(&["a1", "a2", "a0", "abot"]), &t));
        assert!(!trace_equivalent(&tr(&["a1", "a2"]), &tr(&["a2", "a1"]), &t));
        assert!(!trace_equivalent(&tr(&["a1"]), &tr(&["a1", "a1"]), &t));
    }

    #[test]
    fn canonical_key_examples() {
        let t = IndependenceTable::from_independent_pairs(2, &[(0, 1)]);
        assert_eq!(canonical_key(&[1, 0], &t).as_ref(), &[0, 1]);
        let dep = IndependenceTable::from_independent_pairs(2, &[]);
        assert_eq!(canonical_key(&[1, 0, 1], &dep).as_ref(), &[1, 0, 1]);
    }

    #[test]
    fn canonical_key_matches_closure_on_three_letters() {
        // a–b independent, b–c independent, a–c dependent
        let t = IndependenceTable::from_independent_pairs(3, &[(0, 1), (1, 2)]);
        for len in 0..=6usize {
            for code in 0..3usize.pow(len as u32) {
                let tr: Vec<ActionId> = (0..len).map(|i| code / 3usize.pow(i as u32) % 3).collect();
                let class = swap_closure(&tr, &t, 8).unwrap();
                let key = canonical_key(&tr, &t);
                assert_eq!(&key, class.iter().min().unwrap());
                for other in &class {
                    assert_eq!(canonical_key(other, &t), key);
                }
            }
        }
    }

    #[test]
    fn csv_lists_every_ordered_pair() {
        let (p, t) = consensus_table(0.1);
        let csv = t.to_csv(&p.system);
        assert_eq!(csv.lines().count(), 1 + 16);
        assert!(csv.contains("a0,a0,DEP"));
        assert!(csv.contains("a0,a1,0.097979590"));
    }

    fn arb_table() -> impl Strategy<Value = IndependenceTable> {
        proptest::collection::vec(any::<bool>(), 6).prop_map(|bits| {
            let pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
            let chosen: Vec<_> = pairs.iter().zip(bits).filter(|(_, b)| *b).map(|(p, _)| *p).collect();
            IndependenceTable::from_independent_pairs(4, &chosen)
        })
    }

    proptest! {
        #[test]
        fn equivalence_is_an_equivalence(
            t in arb_table(),
            x in proptest::collection::vec(0usize..4, 0..7),
            perm_seed in any::<u64>(),
        ) {
            prop_assert!(trace_equivalent(&x, &x, &t));
            let class: Vec<Trace> = swap_closure(&x, &t, 8).unwrap().into_iter().collect();
            let y = &class[(perm_seed as usize) % class.len()];
            let z = &class[(perm_seed as usize / 7) % class.len()];
            prop_assert!(trace_equivalent(&x, y, &t) && trace_equivalent(y, &x, &t));
            prop_assert!(trace_equivalent(y, z, &t));
            prop_assert_eq!(canonical_key(y, &t), canonical_key(z, &t));
        }

        #[test]
        fn key_is_a_member_of_the_class(t in arb_table(), x in proptest::collection::vec(0usize..4, 0..8)) {
            let k = canonical_key(&x, &t);
            prop_assert!(trace_equivalent(&x, &k, &t));
            prop_assert!(k.as_ref() <= x.as_slice());
            prop_assert_eq!(canonical_key(&k, &t), k.clone());
        }

        #[test]
        fn eep_never_exceeds_length(t in arb_table(), x in proptest::collection::vec(0usize..4, 0..10), a in 0usize..4) {
            prop_assert!(eep(&x, a, &t) <= x.len());
        }
    }
}
