//! Fixtures shared by the criterion benchmarks.

use evalgate_core::sim::{generate, to_jsonl, Scenario, ScenarioSpec};

/// A line-delimited trace containing every simulated scenario.
pub fn mixed_trace(seed: u64) -> String {
    [Scenario::Fm1, Scenario::Fm2, Scenario::Fm3, Scenario::Fm5]
        .into_iter()
        .map(|s| {
            to_jsonl(&generate(&ScenarioSpec::new(s, seed)).expect("default variants are valid"))
        })
        .collect()
}

/// Deterministic pseudo-random series in [0, 1) without pulling in an RNG.
pub fn series(len: usize, salt: u64) -> Vec<f64> {
    let mut state = salt
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    (0..len)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect()
}
