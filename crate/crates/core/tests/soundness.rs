//! Random valid executions stay inside the computed balls.

use apor_core::models::preset;
use apor_core::oracle::{random_valid_executions, validate_soundness, SLACK_TOLERANCE};
use apor_core::{reach, ReachOptions};

fn audit(name: &str) {
    let p = preset(name).unwrap();
    let r = reach(&p.system, &ReachOptions::new(p.horizon, p.delta0, p.epsilon)).unwrap();
    assert!(!r.truncated, "{name}");
    let samples = random_valid_executions(&p.system, p.horizon, 100, 2024).unwrap();
    let report = validate_soundness(&r, &samples);
    assert_eq!(report.checked(), 100 * (p.horizon + 1) - dead_steps(&samples, p.horizon), "{name}");
    assert!(report.passed(), "{name}: {report}");
    assert!(report.min_slack() >= SLACK_TOLERANCE);
    assert!(!validate_soundness(&r.with_scaled_radii(0.5), &samples).passed(), "{name}");
}

fn dead_steps(samples: &[apor_core::oracle::Sample], horizon: usize) -> usize {
    samples.iter().map(|s| horizon + 1 - s.execution.states.len()).sum()
}

#[test]
fn consensus() {
    audit("consensus");
}

#[test]
fn heating() {
    audit("heating");
}

#[test]
fn platoon_scenarios() {
    for name in ["platoon2-60", "platoon2-40", "platoon2-25"] {
        audit(name);
    }
}

#[test]
fn lean_history_is_audited_on_boxes() {
    let p = preset("consensus").unwrap();
    let lean = ReachOptions { keep_history: false, ..ReachOptions::new(p.horizon, p.delta0, p.epsilon) };
    let r = reach(&p.system, &lean).unwrap();
    let samples = random_valid_executions(&p.system, p.horizon, 100, 1).unwrap();
    assert!(validate_soundness(&r, &samples).passed());
}
