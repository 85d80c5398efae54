//! Minimal SVG plot: one panel per coordinate with the reach envelope and sampled traces.

use std::fmt::Write as _;

const PANEL_W: f64 = 640.0;
const PANEL_H: f64 = 200.0;
const MARGIN: f64 = 40.0;

/// `envelopes[i][t]` is the `(lower, upper)` bound of coordinate `i` at step `t`;
/// `samples[k][t][i]` the value of coordinate `i` in sample `k` at step `t`.
pub fn render(title: &str, envelopes: &[Vec<(f64, f64)>], samples: &[Vec<Vec<f64>>]) -> String {
    let height = MARGIN + envelopes.len() as f64 * (PANEL_H + MARGIN);
    let width = PANEL_W + 2.0 * MARGIN;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<text x="{MARGIN}" y="20">{}</text>"#, escape(title));
    for (i, env) in envelopes.iter().enumerate() {
        let top = MARGIN + i as f64 * (PANEL_H + MARGIN);
        let steps = env.len().max(2) - 1;
        let mut lo = env.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
        let mut hi = env.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            lo -= 1.0;
            hi += 1.0;
        }
        let x = |t: usize| MARGIN + PANEL_W * t as f64 / steps as f64;
        let y = |v: f64| top + PANEL_H * (hi - v) / (hi - lo);
        let _ = writeln!(
            out,
            r##"<rect x="{MARGIN}" y="{top}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#999"/>"##
        );
        let _ = writeln!(out, r#"<text x="{}" y="{}">x[{i}]</text>"#, MARGIN + 4.0, top + 14.0);
        let _ = writeln!(out, r#"<text x="2" y="{}">{hi:.3}</text>"#, top + 10.0);
        let _ = writeln!(out, r#"<text x="2" y="{}">{lo:.3}</text>"#, top + PANEL_H);
        for sample in samples {
            let pts: Vec<String> = sample
                .iter()
                .enumerate()
                .filter(|(t, _)| *t < env.len())
                .map(|(t, s)| format!("{:.2},{:.2}", x(t), y(s[i])))
                .collect();
            let _ = writeln!(out, r##"<polyline fill="none" stroke="#e0b000" stroke-width="0.6" points="{}"/>"##, pts.join(" "));
        }
        for (color, pick) in [("#1f4fd1", 1usize), ("#d11f1f", 0usize)] {
            let pts: Vec<String> = env
                .iter()
                .enumerate()
                .map(|(t, e)| format!("{:.2},{:.2}", x(t), y(if pick == 1 { e.1 } else { e.0 })))
                .collect();
            let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        }
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
