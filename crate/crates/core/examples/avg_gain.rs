//! Average relative gain of methods over a baseline row.

use std::collections::BTreeMap;

use sgt::analytics::avg_gain;

fn main() {
    let baseline: BTreeMap<&str, f64> = [("arith", 0.40), ("trivia", 0.55), ("sql", 0.20)].into();
    let methods = [
        ("its", [("arith", 0.42), ("trivia", 0.55), ("sql", 0.21)]),
        ("sft", [("arith", 0.46), ("trivia", 0.60), ("sql", 0.25)]),
        ("dpo_3", [("arith", 0.52), ("trivia", 0.63), ("sql", 0.29)]),
    ];
    for (name, row) in methods {
        let row: BTreeMap<&str, f64> = row.into();
        match avg_gain(&row, &baseline) {
            Ok(g) => println!("{name:<6} {:+.1}%", g * 100.0),
            Err(e) => println!("{name:<6} {e}"),
        }
    }
}
