//! Fixtures shared by the benchmarks under `benches/`.

use groundloop::harness::{generate_suite, Profile, Scenario};

pub const SEED: u64 = 20_240_601;

/// A fixed generated suite, so numbers are comparable across runs.
pub fn suite(n: usize, profile: Profile) -> Vec<Scenario> {
    generate_suite(SEED, n, profile)
}

/// Scene with the most entities among the first `n` generated scenarios.
pub fn busiest_scene(n: usize) -> groundloop::SceneWorld {
    suite(n, Profile::Standard)
        .into_iter()
        .max_by_key(|s| s.scene.entities.len())
        .expect("n > 0")
        .scene
}
