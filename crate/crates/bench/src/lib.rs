//! Fixtures shared by the benchmarks.

use risac::airlink::{simulate_stacks, Noise, ObservationStacks};
use risac::paoe::PathObservation;
use risac::sbtts::estimate_aoa_candidates;
use risac::math::wrap_direction;
use risac::{synthesize_scene, Scene, SceneConfig};

/// A case-1 scene with the default sizes and its noisy stacks at 50 dBm.
pub fn los_fixture(seed: u64) -> (Scene, ObservationStacks) {
    let cfg = SceneConfig { seed, ..SceneConfig::for_case(1).expect("case 1 exists") };
    let scene = synthesize_scene(&cfg).expect("default config is valid");
    let stacks = simulate_stacks(&scene, 50.0, Noise::Awgn { seed }).expect("scene simulates");
    (scene, stacks)
}

/// Exact BS-RIS observations of a case-3 scene, strongest first.
pub fn nlos_observations(seed: u64) -> Vec<PathObservation> {
    let cfg = SceneConfig { seed, ..SceneConfig::for_case(3).expect("case 3 exists") };
    let scene = synthesize_scene(&cfg).expect("default config is valid");
    let mut paths = scene.paths.bs_ris.clone();
    paths.sort_by(|a, b| b.gain.norm_sqr().total_cmp(&a.gain.norm_sqr()));
    paths
        .iter()
        .map(|p| PathObservation {
            theta: p.aod,
            phis: estimate_aoa_candidates(wrap_direction(2.0 * p.aoa)).to_vec(),
            range_m: p.length_m(),
            weight: p.gain.norm_sqr(),
        })
        .collect()
}
