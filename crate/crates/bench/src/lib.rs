//! Shared fixtures for the criterion benches under `benches/`.

use flchain_core::queue::QueueParams;

/// Queue configurations from small to the largest pool the sweeps use.
pub fn queue_cases() -> Vec<(&'static str, QueueParams)> {
    [
        ("S10_SB2", 10, 2, 1.0, 2.0),
        ("S100_SB10", 100, 10, 0.2, 2.0),
        ("S1000_SB50", 1000, 50, 0.2, 2.0),
    ]
    .into_iter()
    .map(|(name, s, sb, lambda, nu)| (name, QueueParams::new(s, sb, lambda, nu, 1000.0).unwrap()))
    .collect()
}
