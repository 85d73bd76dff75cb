//! Shared fixtures for the benchmarks.

use gscoop::sim::{derive_seed, generate_scene, prepare_ego, EgoInputs, EpisodeConfig, GeneratorConfig, Scene};
use gscoop::ObservationModel;

/// A generated three-agent scene with `gaussians` primitives per agent,
/// prepared for agent 0.
pub fn fixture(gaussians: usize) -> (Scene, EgoInputs, EpisodeConfig) {
    let cfg = EpisodeConfig::default();
    let model = ObservationModel {
        gaussians_per_agent: gaussians,
        ..ObservationModel::default()
    };
    let spec = generate_scene(derive_seed(1, "bench", 0), &GeneratorConfig::default()).expect("valid generator");
    let scene = Scene::prepare(spec, model, &cfg).expect("scene");
    let inputs = prepare_ego(&scene, 0, &cfg).expect("ego inputs");
    (scene, inputs, cfg)
}
