//! Acceptance criteria for the reachability engine. Prints one PASS/FAIL line
//! per criterion and exits non-zero when any criterion fails.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use apor_core::discrepancy::{induced_2norm, system_discrepancies};
use apor_core::models::{preset, ModelPreset};
use apor_core::oracle::{
    self, audit_ted, audit_trace_operations, check_moved_action, check_swapped_pairs, random_valid_executions,
    related_offsets, valid_traces_up_to, validate_soundness, DEFAULT_NODE_BUDGET,
};
use apor_core::reach::{check_safety, reach, reach_bounds, reach_prepared, ReachOptions, ReachResult, Verdict};
use apor_core::{eep, Bound, IndependenceTable};

// Criterion 1
const CONSENSUS_NORMS: [f64; 3] = [0.57, 0.56, 0.53];
const HEATING_NORM: f64 = 0.99;
const FLOW_NORM: f64 = 0.52;
const NORM_TOL: f64 = 0.005;
const NORM_RUNTIME_S: f64 = 1.0;
// Criterion 2
const CONSENSUS_PAIRS: [(&str, &str, f64); 3] = [("a0", "a1", 0.1), ("a0", "a2", 0.07), ("a1", "a2", 0.17)];
const BOUND_TOL: f64 = 0.005;
const HEATING_PAIR_MAX: f64 = 0.6;
const PLATOON_CROSS: f64 = 0.282;
const PLATOON_SUBSET: f64 = 0.141;
// Criterion 4
const CONSENSUS_BOX: (f64, f64) = (-0.4, 0.4);
const CONSENSUS_TRACES: usize = 2;
const CONSENSUS_NOMINAL: u64 = 216;
const CONSENSUS_RUNTIME_S: f64 = 1.0;
const MIN_SPEEDUP: f64 = 5.0;
// Criterion 5
const HEATING_TRACES: usize = 1;
const HEATING_LENGTH: usize = 32;
const HEATING_NOMINAL: u64 = 1_679_616; // 6^8
const ROOM0_RANGE: (f64, f64) = (60.0, 79.0);
const HEATING_RUNTIME_S: f64 = 1.0;
// Criterion 6
const PLATOON2_SCENARIOS: [&str; 3] = ["platoon2-60", "platoon2-40", "platoon2-25"];
const PLATOON2_MAX_TRACES: usize = 43_758;
const PLATOON2_RUNTIME_S: f64 = 5.0;
const PLATOON4_TRACE_LIMIT: usize = 10_000;
const PLATOON4_RUNTIME_S: f64 = 60.0;
// Criterion 7
const AUDIT_SAMPLES: usize = 100;
const AUDIT_SEED: u64 = 2024;
const SLACK_TOL: f64 = -1e-9;
const PLATOON4_AUDIT_BUDGET: usize = 100_000;
// Criterion 8
const HALVINGS: i32 = 4;
const SIM_SAMPLES: usize = 1000;
const SIM_SEED: u64 = 7;
const SIM_FACTOR: f64 = 2.0;
// Criterion 9
const TRACE_OPS_MAX_LEN: usize = 6;
const BOUND_INSTANCES: usize = 1000;
const MOVE_MAX_LEN: usize = 6;
// Criterion 10
const TED_MAX_LEN: usize = 8;
const TED_RANDOM_OFFSETS: usize = 24;
const MUTATION_SCALE: f64 = 0.5;

/// Sub-check failures of one criterion; empty means PASS.
#[derive(Default)]
struct Report {
    notes: Vec<String>,
    failures: Vec<String>,
}

impl Report {
    fn check(&mut self, ok: bool, what: String) {
        if ok {
            self.notes.push(what);
        } else {
            self.failures.push(what);
        }
    }
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn table_for(p: &ModelPreset) -> IndependenceTable {
    IndependenceTable::build(&p.system, p.epsilon).unwrap()
}

fn run(p: &ModelPreset, max_tuples: Option<usize>) -> ReachResult {
    let mut opts = ReachOptions::new(p.horizon, p.delta0, p.epsilon);
    if let Some(m) = max_tuples {
        opts.max_tuples = m;
    }
    reach(&p.system, &opts).unwrap()
}

fn criterion_1(r: &mut Report) {
    let t = Instant::now();
    let consensus = preset("consensus").unwrap();
    for (i, want) in CONSENSUS_NORMS.iter().enumerate() {
        let got = induced_2norm(&consensus.system.actions[i].matrix).unwrap();
        r.check((got - want).abs() <= NORM_TOL, format!("|A{i}| = {got:.5} vs {want}"));
    }
    let heating = preset("heating").unwrap();
    let sys = &heating.system;
    let wh = induced_2norm(&sys.action(sys.action_id("on0").unwrap()).matrix).unwrap();
    let wt = induced_2norm(&sys.action(sys.action_id("flow").unwrap()).matrix).unwrap();
    r.check((wh - HEATING_NORM).abs() <= NORM_TOL, format!("|W_h| = {wh:.5} vs {HEATING_NORM}"));
    r.check((wt - FLOW_NORM).abs() <= NORM_TOL, format!("flow = {wt:.5} vs {FLOW_NORM}"));
    let s = secs(t);
    r.check(s < NORM_RUNTIME_S, format!("{s:.3} s"));
}

fn criterion_2(r: &mut Report) {
    let p = preset("consensus").unwrap();
    let rinv = p.system.invariant_radius.unwrap_or(f64::NAN);
    r.check((rinv - 4.0 * 3f64.sqrt()).abs() < 1e-12, format!("r_inv = {rinv:.5}"));
    let t = table_for(&p);
    let id = |n: &str| p.system.action_id(n).unwrap();
    for (x, y, want) in CONSENSUS_PAIRS {
        match t.bound(id(x), id(y)) {
            Bound::Value(v) => r.check(v <= want && (v - want).abs() <= BOUND_TOL, format!("({x},{y}) = {v:.5} vs {want}")),
            Bound::Dependent => r.check(false, format!("({x},{y}) has no bound")),
        }
    }

    let h = preset("heating").unwrap();
    let t = table_for(&h);
    let mut worst: f64 = 0.0;
    let mut missing = 0;
    for i in 0..3 {
        for j in 0..3 {
            if i == j {
                continue;
            }
            for x in ["on", "off"] {
                for y in ["on", "off"] {
                    let a = h.system.action_id(&format!("{x}{i}")).unwrap();
                    let b = h.system.action_id(&format!("{y}{j}")).unwrap();
                    match t.bound(a, b) {
                        Bound::Value(v) => worst = worst.max(v),
                        Bound::Dependent => missing += 1,
                    }
                }
            }
        }
    }
    r.check(missing == 0 && worst <= HEATING_PAIR_MAX, format!("heating cross-room max {worst:.5}, {missing} unbounded"));

    let pl = preset("platoon2").unwrap();
    let t = table_for(&pl);
    let names: Vec<&str> = pl.system.actions.iter().map(|a| a.name.as_str()).collect();
    let mut all: f64 = 0.0;
    let mut subset: f64 = 0.0;
    for a in 0..names.len() {
        for b in 0..names.len() {
            if let Bound::Value(v) = t.bound(a, b) {
                all = all.max(v);
                // every car picks from b = −10 and c = 0
                if [names[a], names[b]].iter().all(|n| n.bytes().all(|c| matches!(c, b'b' | b'c'))) {
                    subset = subset.max(v);
                }
            }
        }
    }
    r.check((all - PLATOON_CROSS).abs() <= BOUND_TOL, format!("platoon cross-car {all:.5} vs {PLATOON_CROSS}"));
    r.check((subset - PLATOON_SUBSET).abs() <= BOUND_TOL, format!("{{-10,0}} subset {subset:.5} vs {PLATOON_SUBSET}"));
}

fn criterion_3(r: &mut Report) {
    let p = preset("consensus").unwrap();
    let t = IndependenceTable::build(&p.system, 0.1).unwrap();
    let trace = p.system.trace(&["abot", "a0", "a1"]).unwrap();
    let k = eep(&trace, p.system.action_id("a2").unwrap(), &t);
    r.check(k == 2, format!("eep = {k}"));
}

/// Median milliseconds per call, over batches of at least 20 ms.
fn time_per_call(mut f: impl FnMut()) -> f64 {
    let t = Instant::now();
    f();
    let once = t.elapsed().as_secs_f64() * 1e3;
    let calls = (20.0 / once.max(1e-6)).ceil().clamp(1.0, 1e6) as usize;
    let mut times: Vec<f64> = (0..5)
        .map(|_| {
            let t = Instant::now();
            for _ in 0..calls {
                f();
            }
            t.elapsed().as_secs_f64() * 1e3 / calls as f64
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times[2]
}

fn criterion_4(r: &mut Report) {
    let p = preset("consensus").unwrap();
    let t = Instant::now();
    let res = run(&p, None);
    let s = secs(t);
    for i in 0..p.system.dimension {
        let (lo, hi) = reach_bounds(&res, i).unwrap()[p.horizon];
        r.check(lo >= CONSENSUS_BOX.0 && hi <= CONSENSUS_BOX.1, format!("x{i} in [{lo:.4}, {hi:.4}]"));
    }
    let per = res.explored_per_cover();
    r.check(per.iter().all(|&n| n == CONSENSUS_TRACES), format!("traces per cover {per:?} vs {CONSENSUS_TRACES}"));
    let nominal: Vec<_> = res.covers.iter().map(|c| c.nominal.exact()).collect();
    r.check(
        nominal.iter().all(|&n| n == Some(CONSENSUS_NOMINAL)),
        format!("nominal {nominal:?} vs {CONSENSUS_NOMINAL}"),
    );
    r.check(s < CONSENSUS_RUNTIME_S, format!("{s:.3} s"));

    let table = table_for(&p);
    let betas = system_discrepancies(&p.system).unwrap();
    let opts = ReachOptions { parallel: false, ..ReachOptions::new(p.horizon, p.delta0, p.epsilon) };
    let por = time_per_call(|| {
        std::hint::black_box(reach_prepared(&p.system, &opts, table.clone(), &betas).unwrap());
    });
    let q0 = p.system.initial_state(p.system.initial_set.center());
    let exhaustive = time_per_call(|| {
        std::hint::black_box(
            oracle::enumerate_executions(&p.system, &q0, p.horizon, DEFAULT_NODE_BUDGET, |_, _| {}).unwrap(),
        );
    });
    let ratio = exhaustive / por;
    r.check(ratio >= MIN_SPEEDUP, format!("speedup {ratio:.2}x ({por:.4} ms vs {exhaustive:.4} ms)"));
}

fn criterion_5(r: &mut Report) {
    let p = preset("heating").unwrap();
    let t = Instant::now();
    let res = run(&p, None);
    let s = secs(t);
    r.check(p.horizon == HEATING_LENGTH, format!("horizon {}", p.horizon));
    let per = res.explored_per_cover();
    r.check(per.iter().all(|&n| n == HEATING_TRACES), format!("executions per cover {per:?}"));
    let lengths: Vec<usize> = res.tuples_at(p.horizon).map(|x| x.trace().len()).collect();
    r.check(lengths.iter().all(|&l| l == HEATING_LENGTH), format!("lengths {lengths:?}"));
    let nominal: Vec<_> = res.covers.iter().map(|c| c.nominal.to_string()).collect();
    r.check(
        res.covers.iter().all(|c| c.nominal.exact() == Some(HEATING_NOMINAL)),
        format!("nominal {nominal:?} vs 6^8"),
    );
    let env = reach_bounds(&res, 0).unwrap();
    let lo = env.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
    let hi = env.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
    r.check(lo >= ROOM0_RANGE.0 && hi <= ROOM0_RANGE.1, format!("room 0 in [{lo:.3}, {hi:.3}]"));
    let samples = random_valid_executions(&p.system, p.horizon, AUDIT_SAMPLES, AUDIT_SEED).unwrap();
    let inside = samples
        .iter()
        .flat_map(|s| &s.execution.states)
        .all(|q| (ROOM0_RANGE.0..=ROOM0_RANGE.1).contains(&q.continuous[0]));
    r.check(inside, "simulated room 0 within range".into());
    r.check(s < HEATING_RUNTIME_S, format!("{s:.3} s"));
}

fn criterion_6(r: &mut Report) {
    for name in PLATOON2_SCENARIOS {
        let p = preset(name).unwrap();
        let t = Instant::now();
        let res = run(&p, None);
        let verdict = check_safety(&res, p.safety.as_ref().unwrap());
        let s = secs(t);
        let n = res.explored_total();
        r.check(!res.truncated && n <= PLATOON2_MAX_TRACES, format!("{name}: {n} traces"));
        r.check(verdict == Verdict::Safe, format!("{name}: {verdict}"));
        r.check(s < PLATOON2_RUNTIME_S, format!("{name}: {s:.3} s"));
    }
    let p = preset("platoon4").unwrap();
    let t = Instant::now();
    // a table past the limit already fails the count, so stop there
    let res = run(&p, Some(PLATOON4_TRACE_LIMIT));
    let verdict = check_safety(&res, p.safety.as_ref().unwrap());
    let s = secs(t);
    let n = res.explored_total();
    r.check(
        !res.truncated && n < PLATOON4_TRACE_LIMIT,
        format!("platoon4: {n} traces, {} of {} steps completed", res.completed_steps(), p.horizon),
    );
    r.check(
        !res.truncated && verdict == Verdict::Safe,
        format!("platoon4: {verdict} over steps 0..={}", res.completed_steps()),
    );
    r.check(s < PLATOON4_RUNTIME_S, format!("platoon4: {s:.3} s"));
}

fn criterion_7(r: &mut Report) {
    for name in ["consensus", "heating", "platoon2-60", "platoon2-40", "platoon2-25", "platoon4"] {
        let p = preset(name).unwrap();
        let res = run(&p, (name == "platoon4").then_some(PLATOON4_AUDIT_BUDGET));
        let samples = random_valid_executions(&p.system, p.horizon, AUDIT_SAMPLES, AUDIT_SEED).unwrap();
        let rep = validate_soundness(&res, &samples);
        let steps = res.completed_steps();
        r.check(
            rep.passed() && rep.min_slack() >= SLACK_TOL,
            format!("{name}: {} checks over steps 0..={steps}, min slack {:.3e}", rep.checked(), rep.min_slack()),
        );
        if name == "platoon4" {
            // informational: the 4-car reach itself is gated by criterion 6
            r.notes.push(format!("{name}: {steps} of {} steps completed", p.horizon));
        } else {
            r.check(steps == p.horizon, format!("{name}: {steps} of {} steps audited", p.horizon));
        }
    }
}

fn criterion_8(r: &mut Report) {
    let p = preset("consensus").unwrap();
    let dim = p.system.dimension;
    let mut widths = Vec::new();
    let mut finest = vec![0.0; dim];
    for k in 0..=HALVINGS {
        let scale = 0.5f64.powi(k);
        let opts = ReachOptions { keep_history: false, ..ReachOptions::new(p.horizon, p.delta0 * scale, p.epsilon * scale) };
        let res = reach(&p.system, &opts).unwrap();
        let w: Vec<f64> = (0..dim)
            .map(|i| {
                let (lo, hi) = reach_bounds(&res, i).unwrap()[p.horizon];
                hi - lo
            })
            .collect();
        widths.push(w.iter().copied().fold(0.0, f64::max));
        finest = w;
    }
    r.check(widths.windows(2).all(|w| w[1] < w[0]), format!("widths {widths:.4?}"));
    let samples = random_valid_executions(&p.system, p.horizon, SIM_SAMPLES, SIM_SEED).unwrap();
    for i in 0..dim {
        let vals = samples.iter().filter_map(|s| s.execution.states.get(p.horizon)).map(|q| q.continuous[i]);
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let sim = hi - lo;
        r.check(finest[i] <= SIM_FACTOR * sim, format!("x{i}: {:.4} vs simulated {sim:.4} ({:.2}x)", finest[i], finest[i] / sim));
    }
}

fn criterion_9(r: &mut Report) {
    for name in ["consensus", "heating", "platoon2"] {
        let p = preset(name).unwrap();
        let t = table_for(&p);
        let a = audit_trace_operations(&t, TRACE_OPS_MAX_LEN, 1 << 24, usize::MAX).unwrap();
        r.check(
            a.mismatches == 0,
            format!("{name}: {} traces, {} closures, {} mismatches {:?}", a.traces, a.closures, a.mismatches, a.examples),
        );
    }
    for p in apor_core::models::all_presets() {
        let t = table_for(&p);
        let betas = system_discrepancies(&p.system).unwrap();
        let pairs = check_swapped_pairs(&p.system, &t, &betas, BOUND_INSTANCES, 11).unwrap();
        r.check(
            pairs.checked == BOUND_INSTANCES && pairs.min_slack >= SLACK_TOL,
            format!("{} swaps: min slack {:.3e}", p.name, pairs.min_slack),
        );
        let moved = check_moved_action(&p.system, &t, &betas, BOUND_INSTANCES, MOVE_MAX_LEN, 12).unwrap();
        r.check(
            moved.checked == BOUND_INSTANCES && moved.min_slack >= SLACK_TOL,
            format!("{} moves: min slack {:.3e}", p.name, moved.min_slack),
        );
    }
}

fn criterion_10(r: &mut Report) {
    let p = preset("consensus").unwrap();
    let sys = &p.system;
    let table = table_for(&p);
    let betas = system_discrepancies(sys).unwrap();
    let q0 = sys.initial_state(sys.initial_set.center());
    let traces = valid_traces_up_to(sys, &q0, TED_MAX_LEN, DEFAULT_NODE_BUDGET).unwrap();
    let offsets = related_offsets(sys.dimension, p.delta0, sys.norm, TED_RANDOM_OFFSETS, 5);
    let ok = audit_ted(sys, &table, &betas, &q0, &traces, p.delta0, &offsets, 1.0).unwrap();
    r.check(
        ok.violations == 0 && ok.min_slack >= SLACK_TOL,
        format!("{} anchors, {} related, min slack {:.3e}", ok.anchors, ok.related, ok.min_slack),
    );
    let bad = audit_ted(sys, &table, &betas, &q0, &traces, p.delta0, &offsets, MUTATION_SCALE).unwrap();
    r.check(bad.violations > 0, format!("radii x{MUTATION_SCALE}: {} violations", bad.violations));
}

fn main() -> ExitCode {
    let criteria: [(u32, fn(&mut Report)); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, f) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let mut report = Report::default();
        if let Err(e) = panic::catch_unwind(AssertUnwindSafe(|| f(&mut report))) {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            report.failures.push(format!("panicked: {}", msg.unwrap_or_default()));
        }
        let pass = report.failures.is_empty();
        failed += usize::from(!pass);
        let detail = if pass { report.notes.join("; ") } else { report.failures.join("; ") };
        println!("criterion {n}: {} ({:.1} s) {detail}", if pass { "PASS" } else { "FAIL" }, secs(t));
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
