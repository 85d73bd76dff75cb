//! Simulated encoder output: noisy semantic Gaussians sampled on the
//! surfaces an agent can see.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::classes::{SemanticClass, EMPTY_CLASS, NUM_CLASSES, NUM_SEMANTIC};
use crate::comms::transform_gaussian;
use crate::error::Result;
use crate::gaussian::SemanticGaussian;
use crate::geometry::{Roi, Vec3};
use crate::sim::raster::{Visibility, WorldRaster};
use crate::sim::{derive_seed, yaw_quat, ObservationModel, SceneSpec};

/// Share of the peak semantic weight spread as random clutter over the
/// other semantic classes.
const SEMANTIC_CLUTTER: f64 = 0.05;

fn base_scale(class: u8) -> Vec3 {
    match SemanticClass::from_index(class as usize) {
        Some(SemanticClass::Road | SemanticClass::Sidewalk | SemanticClass::Terrain) => {
            Vec3::new(0.3, 0.3, 0.15)
        }
        Some(SemanticClass::Pole | SemanticClass::TrafficSign) => Vec3::new(0.12, 0.12, 0.25),
        _ => Vec3::new(0.25, 0.25, 0.25),
    }
}

/// Observation of `agent` in the world frame. Noise is drawn in the world
/// frame from a stream seeded by `(spec.seed, agent)`.
pub fn observe_world(
    spec: &SceneSpec,
    raster: &WorldRaster,
    visibility: &Visibility,
    agent: usize,
    model: &ObservationModel,
    roi: &Roi,
) -> Result<Vec<SemanticGaussian>> {
    model.validate()?;
    let g = &raster.geometry;
    let pose = spec.agents[agent].transform();
    let to_agent = pose.inverse();
    let sensor = spec.agents[agent].sensor();
    let candidates: Vec<usize> = (0..g.num_voxels())
        .filter(|&i| visibility.per_agent[agent][i] && roi.contains(&to_agent.apply(&g.center_of(i))))
        .collect();
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "observe", agent as u64));
    let pos_noise = Normal::new(0.0, model.position_noise).expect("finite");
    let scale_noise = Normal::new(0.0, model.scale_jitter).expect("finite");
    let half = 0.5 * g.voxel_size;
    let mut out = Vec::with_capacity(model.gaussians_per_agent);
    for _ in 0..model.gaussians_per_agent {
        let v = candidates[rng.random_range(0..candidates.len())];
        let truth = raster.labels[v];
        let mut mean = g.center_of(v);
        for k in 0..3 {
            mean[k] += rng.random_range(-half..half);
        }
        for k in 0..3 {
            mean[k] += pos_noise.sample(&mut rng);
        }
        let mut class = truth as usize;
        if rng.random_bool(model.label_flip) {
            let other = rng.random_range(0..NUM_SEMANTIC - 1);
            class = if other >= class { other + 1 } else { other };
        }
        let mut semantics = [0.0; NUM_CLASSES];
        for (k, s) in semantics.iter_mut().enumerate().take(NUM_SEMANTIC) {
            let clutter: f64 = rng.random();
            *s = if k == class {
                model.semantic_magnitude
            } else {
                model.semantic_magnitude * SEMANTIC_CLUTTER * clutter
            };
        }
        debug_assert_eq!(semantics[EMPTY_CLASS], 0.0);
        let base = base_scale(truth);
        let scale = base.map(|s| s * scale_noise.sample(&mut rng).exp());
        let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let range = (mean - sensor).norm();
        let opacity = (model.opacity_near * (-range / model.opacity_falloff).exp()).clamp(0.0, 1.0);
        out.push(SemanticGaussian::new(mean, scale, yaw_quat(yaw), opacity, semantics)?);
    }
    Ok(out)
}

/// Observation of `agent` expressed in its own frame.
pub fn observe(
    spec: &SceneSpec,
    raster: &WorldRaster,
    visibility: &Visibility,
    agent: usize,
    model: &ObservationModel,
    roi: &Roi,
) -> Result<Vec<SemanticGaussian>> {
    let to_agent = spec.agents[agent].transform().inverse();
    Ok(observe_world(spec, raster, visibility, agent, model, roi)?
        .iter()
        .map(|g| transform_gaussian(g, &to_agent))
        .collect())
}
