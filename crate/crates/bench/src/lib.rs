//! Shared workloads for the benchmarks.

use collapse_walk::experiment::ExperimentConfig;
use collapse_walk::sequencer::{bell_events, EventPoset};

pub fn binary(p0: f64, d: f64, trials: u64) -> ExperimentConfig {
    let (a, b) = (p0.sqrt(), (1.0 - p0).sqrt());
    serde_json::from_value(serde_json::json!({
        "scenario": {"kind": "binary", "alpha": a, "beta": b},
        "trials": trials,
        "master_seed": 1,
        "shift": {"d": d}
    }))
    .expect("valid config")
}

pub fn multi(trials: u64) -> ExperimentConfig {
    serde_json::from_value(serde_json::json!({
        "scenario": {"kind": "multi-outcome", "densities": [0.1, 0.2, 0.3, 0.4], "detector_weights": [1, 2, 3, 4]},
        "trials": trials,
        "master_seed": 1,
        "shift": {"d": 0.02}
    }))
    .expect("valid config")
}

/// Two wings of `per_wing` events each.
pub fn two_wings(per_wing: usize) -> EventPoset {
    EventPoset::new(bell_events(per_wing, per_wing as f64)).expect("spacelike wings")
}
