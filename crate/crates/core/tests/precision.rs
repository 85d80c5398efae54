//! Halving δ0 and ε shrinks the consensus envelope.

use apor_core::models::preset;
use apor_core::{reach, reach_bounds, ReachOptions};

fn final_width(delta0: f64, epsilon: f64) -> f64 {
    let p = preset("consensus").unwrap();
    let opts = ReachOptions { keep_history: false, ..ReachOptions::new(p.horizon, delta0, epsilon) };
    let r = reach(&p.system, &opts).unwrap();
    (0..3)
        .map(|i| {
            let (lo, hi) = reach_bounds(&r, i).unwrap()[p.horizon];
            hi - lo
        })
        .fold(0.0, f64::max)
}

#[test]
fn widths_shrink_over_three_halvings() {
    let widths: Vec<f64> = (0..4).map(|k| final_width(0.5 / f64::powi(2.0, k), 0.1 / f64::powi(2.0, k))).collect();
    for w in widths.windows(2) {
        assert!(w[1] < w[0], "{widths:?}");
    }
}
