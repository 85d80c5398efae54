//! Every related execution of a consensus trace ends within the trace's discrepancy factor.

use apor_core::discrepancy::system_discrepancies;
use apor_core::models::preset;
use apor_core::oracle::{audit_ted, related_offsets, valid_traces_up_to, DEFAULT_NODE_BUDGET};
use apor_core::IndependenceTable;

#[test]
fn consensus_traces_up_to_eight() {
    let p = preset("consensus").unwrap();
    let sys = &p.system;
    let table = IndependenceTable::build(sys, p.epsilon).unwrap();
    let betas = system_discrepancies(sys).unwrap();
    let q0 = sys.initial_state(sys.initial_set.center());
    let traces = valid_traces_up_to(sys, &q0, 8, DEFAULT_NODE_BUDGET).unwrap();
    assert_eq!(traces.iter().filter(|t| t.len() == 8).count(), 36);
    let offsets = related_offsets(sys.dimension, p.delta0, sys.norm, 24, 5);
    let ok = audit_ted(sys, &table, &betas, &q0, &traces, p.delta0, &offsets, 1.0).unwrap();
    assert_eq!(ok.anchors, traces.len());
    assert_eq!(ok.violations, 0, "{ok:?}");
    assert!(ok.min_slack >= -1e-9);
    let mutated = audit_ted(sys, &table, &betas, &q0, &traces, p.delta0, &offsets, 0.5).unwrap();
    assert!(mutated.violations > 0);
}
