//! Fixtures shared by the benchmarks.

use taxrewire_core::synth::{gen_planted, PlantConfig, Planted};

/// A planted problem with `fanout^depth` classes and two instances per class.
pub fn fixture(fanout: usize, depth: u32, dims: usize) -> Planted {
    gen_planted(&PlantConfig {
        n_leaves: fanout.pow(depth),
        fanout,
        dims,
        instances_per_leaf: 2,
        n_misplaced: if depth >= 2 { 2 } else { 0 },
        noise: 0.1,
        seed: 1,
        ..Default::default()
    })
    .expect("valid fixture")
}
