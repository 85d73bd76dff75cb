//! One perception episode: every agent in turn acts as the ego, receives
//! culled messages from the others and predicts its semantic grid.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classes::{one_hot, EMPTY_CLASS};
use crate::comms::{
    cull_to_roi, deserialize_message, enforce_budget, serialize_message, BudgetDecision, CommStats,
    GaussianMessage, Precision,
};
use crate::error::{Error, Result};
use crate::fusion::{fuse_scene, FusionConfig, FusionParams};
use crate::gaussian::SemanticGaussian;
use crate::geometry::{Quat, RigidTransform, Roi, Vec3};
use crate::grid::{ChannelGrid, GridGeometry, LabelGrid};
use crate::learn::Calibration;
use crate::sim::observe::observe;
use crate::sim::raster::{ground_truth_from, GroundTruth, Visibility, WorldRaster};
use crate::sim::{ObservationModel, SceneSpec};
use crate::splat::{splat, SplatConfig};

/// Isotropic std of the empty-space primitive, metres.
pub const EMPTY_SPACE_SCALE: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Single,
    ZeroShot,
    Naive,
    Learned,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Single, Mode::ZeroShot, Mode::Naive, Mode::Learned];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Single => "single",
            Mode::ZeroShot => "zero_shot",
            Mode::Naive => "naive",
            Mode::Learned => "learned",
        }
    }

    pub fn is_collaborative(self) -> bool {
        self != Mode::Single
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown mode {s:?}")))
    }
}

/// Everything about an episode except the scene and the learned state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeConfig {
    pub geometry: GridGeometry,
    pub roi: Roi,
    pub splat: SplatConfig,
    pub fusion: FusionConfig,
    pub precision: Precision,
    /// Per-message byte budget; `None` is unlimited.
    pub budget_bytes: Option<u64>,
    /// Whether received primitives are splatted next to the fused ego set.
    pub keep_received: bool,
    /// Empty-class weight of the empty-space primitive.
    pub empty_weight: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            geometry: GridGeometry::ego_default(),
            roi: Roi::ego_default(),
            splat: SplatConfig::default(),
            fusion: FusionConfig::default(),
            precision: Precision::Fp16,
            budget_bytes: None,
            keep_received: true,
            empty_weight: 5.0,
        }
    }
}

/// The fixed primitive that carries empty-space evidence over the ROI.
pub fn empty_space_gaussian(roi: &Roi, weight: f64) -> SemanticGaussian {
    SemanticGaussian::new(
        roi.center(),
        Vec3::repeat(EMPTY_SPACE_SCALE),
        Quat::IDENTITY,
        1.0,
        one_hot(EMPTY_CLASS, weight),
    )
    .expect("valid empty-space primitive")
}

/// A scene with its raster, visibility, observations and ground truth.
#[derive(Clone, Debug)]
pub struct Scene {
    pub spec: SceneSpec,
    pub model: ObservationModel,
    pub raster: WorldRaster,
    pub visibility: Visibility,
    /// Per-agent observations in the agent's own frame.
    pub observations: Vec<Vec<SemanticGaussian>>,
    pub ground_truth: GroundTruth,
}

impl Scene {
    pub fn prepare(spec: SceneSpec, model: ObservationModel, cfg: &EpisodeConfig) -> Result<Self> {
        spec.validate()?;
        model.validate()?;
        let raster = WorldRaster::build(&spec, cfg.geometry.voxel_size)?;
        let visibility = Visibility::compute(&raster, &spec, &model);
        let observations = (0..spec.agents.len())
            .map(|a| observe(&spec, &raster, &visibility, a, &model, &cfg.roi))
            .collect::<Result<Vec<_>>>()?;
        let ground_truth = ground_truth_from(&raster, &visibility, &spec, &cfg.geometry);
        Ok(Scene {
            spec,
            model,
            raster,
            visibility,
            observations,
            ground_truth,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.spec.agents.len()
    }
}

/// What the ego holds before prediction.
#[derive(Clone, Debug)]
pub struct EgoInputs {
    pub ego: usize,
    pub own: Vec<SemanticGaussian>,
    /// Decoded received primitives in the ego frame, ordered by sender.
    pub received: Vec<SemanticGaussian>,
    /// Accepted wire messages, ordered by sender.
    pub messages: Vec<(u32, Vec<u8>)>,
    pub stats: CommStats,
}

/// Builds, budgets, serializes and decodes the messages sent to `ego`.
pub fn prepare_ego(scene: &Scene, ego: usize, cfg: &EpisodeConfig) -> Result<EgoInputs> {
    let ego_pose = scene.spec.agents[ego].transform();
    let mut inputs = EgoInputs {
        ego,
        own: scene.observations[ego].clone(),
        received: Vec::new(),
        messages: Vec::new(),
        stats: CommStats::default(),
    };
    for (j, agent) in scene.spec.agents.iter().enumerate() {
        if j == ego {
            continue;
        }
        let t = RigidTransform::between(&agent.transform(), &ego_pose);
        let msg = GaussianMessage {
            sender_id: j as u32,
            receiver_id: ego as u32,
            frame_tag: scene.spec.seed as u32,
            precision: cfg.precision,
            gaussians: cull_to_roi(&scene.observations[j], &t, &cfg.roi),
        };
        let len = msg.byte_len();
        match enforce_budget(len, cfg.budget_bytes) {
            BudgetDecision::Reject => inputs.stats.record_rejected(j as u32, ego as u32, len),
            BudgetDecision::Accept => {
                let bytes = serialize_message(&msg)?;
                let decoded = deserialize_message(&bytes)?;
                inputs.stats.record_sent(j as u32, ego as u32, decoded.count(), bytes.len());
                inputs.received.extend(decoded.gaussians);
                inputs.messages.push((j as u32, bytes));
            }
        }
    }
    Ok(inputs)
}

/// Learned state used by the naive and learned modes.
#[derive(Clone, Debug, Default)]
pub struct LearnedState {
    pub fusion: Option<FusionParams>,
    pub calibration: Option<Calibration>,
}

/// Primitives splatted by `mode` for one ego, in splat order.
pub fn splat_set(
    inputs: &EgoInputs,
    mode: Mode,
    cfg: &EpisodeConfig,
    learned: &LearnedState,
) -> Result<Vec<SemanticGaussian>> {
    let mut set = match mode {
        Mode::Single => inputs.own.clone(),
        Mode::ZeroShot => {
            let mut s = inputs.own.clone();
            s.extend(inputs.received.iter().cloned());
            s
        }
        Mode::Naive => {
            let cal = learned
                .calibration
                .as_ref()
                .ok_or_else(|| Error::Config("naive mode needs a trained calibration".into()))?;
            let mut s = inputs.own.clone();
            s.extend(inputs.received.iter().map(|g| cal.apply(g)));
            s
        }
        Mode::Learned => {
            let params = learned
                .fusion
                .as_ref()
                .ok_or_else(|| Error::Config("learned mode needs fusion parameters".into()))?;
            let mut s = fuse_scene(&inputs.own, &inputs.received, &cfg.fusion, params)?;
            if cfg.keep_received {
                s.extend(inputs.received.iter().cloned());
            }
            s
        }
    };
    set.push(empty_space_gaussian(&cfg.roi, cfg.empty_weight));
    Ok(set)
}

/// Predictions of every agent for one mode.
#[derive(Clone, Debug)]
pub struct Episode {
    pub mode: Mode,
    pub predictions: Vec<LabelGrid>,
    pub channels: Vec<ChannelGrid>,
    pub stats: CommStats,
    /// Accepted wire messages as `(sender, receiver, bytes)`.
    pub messages: Vec<(u32, u32, Vec<u8>)>,
}

pub fn run_episode(scene: &Scene, mode: Mode, cfg: &EpisodeConfig, learned: &LearnedState) -> Result<Episode> {
    let mut episode = Episode {
        mode,
        predictions: Vec::new(),
        channels: Vec::new(),
        stats: CommStats::default(),
        messages: Vec::new(),
    };
    for ego in 0..scene.num_agents() {
        let inputs = if mode.is_collaborative() {
            prepare_ego(scene, ego, cfg)?
        } else {
            EgoInputs {
                ego,
                own: scene.observations[ego].clone(),
                received: Vec::new(),
                messages: Vec::new(),
                stats: CommStats::default(),
            }
        };
        let set = splat_set(&inputs, mode, cfg, learned)?;
        let channels = splat(&set, &cfg.geometry, &cfg.splat)?;
        episode.predictions.push(channels.labels(cfg.splat.min_contribution));
        episode.channels.push(channels);
        episode.stats.merge(&inputs.stats);
        episode
            .messages
            .extend(inputs.messages.into_iter().map(|(s, b)| (s, ego as u32, b)));
    }
    Ok(episode)
}
