//! Synthetic multi-agent scenes standing in for a camera encoder: box-based
//! voxel worlds, agent poses, occlusion-limited visibility and noisy
//! semantic Gaussian observations.

mod episode;
mod generate;
mod observe;
mod raster;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classes::SemanticClass;
use crate::error::{Error, Result};
use crate::geometry::{Quat, RigidTransform, Vec3};

pub use episode::{
    empty_space_gaussian, prepare_ego, run_episode, splat_set, EgoInputs, Episode, EpisodeConfig,
    LearnedState, Mode, Scene, EMPTY_SPACE_SCALE,
};
pub use generate::{generate_scene, GeneratorConfig};
pub use observe::{observe, observe_world};
pub use raster::{
    build_ground_truth, dda_first_hit, rasterize_complete, GroundTruth, Visibility, WorldRaster,
};

/// Height of the virtual sensor above the agent origin.
pub const SENSOR_HEIGHT: f64 = 1.8;
/// Largest supported number of agents in a scene.
pub const MAX_AGENTS: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Ground,
    Slab,
    Building,
    Vehicle,
    Wall,
    Pole,
    Sign,
}

/// Yaw-oriented box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    pub kind: ObjectKind,
    pub class: SemanticClass,
    pub center: [f64; 3],
    pub size: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
}

impl SceneObject {
    /// Closed containment test in world coordinates.
    pub fn contains(&self, p: &Vec3) -> bool {
        let d = p - Vec3::from(self.center);
        let (s, c) = self.yaw.sin_cos();
        let local = [c * d.x + s * d.y, -s * d.x + c * d.y, d.z];
        (0..3).all(|i| local[i].abs() <= 0.5 * self.size[i])
    }

    /// Axis-aligned world bounds.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let (s, c) = self.yaw.sin_cos();
        let hx = 0.5 * (c.abs() * self.size[0] + s.abs() * self.size[1]);
        let hy = 0.5 * (s.abs() * self.size[0] + c.abs() * self.size[1]);
        let h = Vec3::new(hx, hy, 0.5 * self.size[2]);
        let center = Vec3::from(self.center);
        (center - h, center + h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentPose {
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
}

impl AgentPose {
    /// Agent-to-world transform.
    pub fn transform(&self) -> RigidTransform {
        RigidTransform::from_yaw(self.yaw, Vec3::from(self.position))
    }

    pub fn sensor(&self) -> Vec3 {
        Vec3::from(self.position) + Vec3::new(0.0, 0.0, SENSOR_HEIGHT)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

/// A static scene: world extents, objects (later entries win on overlap)
/// and agent poses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub world: WorldBounds,
    #[serde(default)]
    pub objects: Vec<SceneObject>,
    pub agents: Vec<AgentPose>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let w = &self.world;
        if !(0..3).all(|i| w.max[i] > w.min[i]) {
            return Err(Error::Spec(format!("empty world extents {w:?}")));
        }
        if self.agents.is_empty() || self.agents.len() > MAX_AGENTS {
            return Err(Error::Spec(format!(
                "scenes need 1 to {MAX_AGENTS} agents, got {}",
                self.agents.len()
            )));
        }
        let tol = 1e-9;
        for (i, o) in self.objects.iter().enumerate() {
            if o.class == SemanticClass::Empty {
                return Err(Error::Spec(format!("object {i} uses the empty class")));
            }
            if !o.size.iter().all(|s| *s > 0.0 && s.is_finite()) {
                return Err(Error::Spec(format!("object {i} has size {:?}", o.size)));
            }
            let (lo, hi) = o.bounds();
            if (0..3).any(|k| lo[k] < w.min[k] - tol || hi[k] > w.max[k] + tol) {
                return Err(Error::Spec(format!(
                    "object {i} ({:?}) extends outside the world",
                    o.kind
                )));
            }
        }
        for (i, a) in self.agents.iter().enumerate() {
            let p = a.position;
            if (0..2).any(|k| p[k] < w.min[k] || p[k] > w.max[k]) {
                return Err(Error::Spec(format!("agent {i} is outside the world")));
            }
            if p[2].abs() > 0.5 {
                return Err(Error::Spec(format!(
                    "agent {i} is {} m off the ground plane",
                    p[2]
                )));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SceneSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Occlusion {
    #[default]
    Raycast,
    None,
}

/// Noise model of the simulated encoder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationModel {
    pub gaussians_per_agent: usize,
    /// Std of the isotropic position noise, metres.
    pub position_noise: f64,
    /// Std of the log-normal multiplicative scale jitter.
    pub scale_jitter: f64,
    /// Probability that a primitive carries a wrong semantic class.
    pub label_flip: f64,
    /// Opacity at zero range.
    pub opacity_near: f64,
    /// Range at which opacity has decayed by `1/e`, metres.
    pub opacity_falloff: f64,
    /// Peak semantic weight of an observed primitive.
    pub semantic_magnitude: f64,
    pub occlusion: Occlusion,
    /// Sensing range, metres.
    pub max_range: f64,
}

impl Default for ObservationModel {
    fn default() -> Self {
        ObservationModel {
            gaussians_per_agent: 25_600,
            position_noise: 0.15,
            scale_jitter: 0.2,
            label_flip: 0.15,
            opacity_near: 0.95,
            opacity_falloff: 60.0,
            semantic_magnitude: 3.0,
            occlusion: Occlusion::Raycast,
            max_range: 30.0,
        }
    }
}

impl ObservationModel {
    /// Default noise with 6400 primitives per agent.
    pub fn reduced() -> Self {
        ObservationModel {
            gaussians_per_agent: 6400,
            ..Default::default()
        }
    }

    /// No noise, no occlusion.
    pub fn noiseless() -> Self {
        ObservationModel {
            position_noise: 0.0,
            scale_jitter: 0.0,
            label_flip: 0.0,
            occlusion: Occlusion::None,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gaussians_per_agent == 0 {
            return Err(Error::Config("gaussians_per_agent must be > 0".into()));
        }
        let nonneg = [
            ("position_noise", self.position_noise),
            ("scale_jitter", self.scale_jitter),
            ("max_range", self.max_range),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.label_flip) {
            return Err(Error::Config(format!("label_flip must be in [0, 1], got {}", self.label_flip)));
        }
        if !(0.0..=1.0).contains(&self.opacity_near) || !(self.opacity_falloff > 0.0) {
            return Err(Error::Config("opacity_near must be in [0, 1] and opacity_falloff > 0".into()));
        }
        if !(self.semantic_magnitude > 0.0) {
            return Err(Error::Config("semantic_magnitude must be > 0".into()));
        }
        Ok(())
    }
}

/// Seed for an independent random stream: the first eight bytes of
/// `SHA-256(root || stream || index)`, little-endian.
pub fn derive_seed(root: u64, stream: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(stream.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

pub(crate) fn yaw_quat(yaw: f64) -> Quat {
    Quat::from_yaw(yaw).canonicalize().expect("unit")
}
