//! Experiment configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use gscoop::fusion::FusionConfig;
use gscoop::learn::{Schedule, TrainConfig};
use gscoop::sim::{derive_seed, EpisodeConfig, GeneratorConfig, Mode, ObservationModel};
use gscoop::{Pooling, Precision, SplatConfig};

/// Message and splat settings of an episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSection {
    pub precision: Precision,
    pub budget_bytes: Option<u64>,
    pub keep_received: bool,
    pub empty_weight: f64,
}

impl Default for EpisodeSection {
    fn default() -> Self {
        let e = EpisodeConfig::default();
        EpisodeSection {
            precision: e.precision,
            budget_bytes: e.budget_bytes,
            keep_received: e.keep_received,
            empty_weight: e.empty_weight,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub batch: usize,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub final_fraction: f64,
    pub weight_decay: f64,
    /// Scenes generated for training, disjoint from the evaluation scenes.
    pub train_scenes: usize,
    /// Evaluation scenes scored after training.
    pub holdout_scenes: usize,
    /// Optimizer steps for the naive-mode calibration; 0 skips it.
    pub calibration_steps: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            steps: 300,
            batch: 1,
            peak_lr: 2e-4,
            warmup_steps: 50,
            final_fraction: 0.0,
            weight_decay: 0.01,
            train_scenes: 20,
            holdout_scenes: 20,
            calibration_steps: 100,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, root_seed: u64, steps: usize) -> TrainConfig {
        TrainConfig {
            schedule: Schedule {
                peak_lr: self.peak_lr,
                warmup_steps: self.warmup_steps,
                final_fraction: self.final_fraction,
            },
            weight_decay: self.weight_decay,
            steps,
            batch: self.batch,
            seed: derive_seed(root_seed, "train-order", 0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Number of generated scenes; ignored when `scene_file` is set.
    pub scenes: usize,
    pub scene_file: Option<PathBuf>,
    pub modes: Vec<Mode>,
    pub out: PathBuf,
    /// Fusion parameters for the learned mode.
    pub params: Option<PathBuf>,
    /// Calibration for the naive mode.
    pub calibration: Option<PathBuf>,
    /// Write predicted and ground-truth VOXG grids.
    pub write_grids: bool,
    /// Write every accepted GMSG message.
    pub dump_messages: bool,
    /// Process scenes one at a time.
    pub serial: bool,
    pub generator: GeneratorConfig,
    pub observation: ObservationModel,
    pub episode: EpisodeSection,
    pub splat: SplatConfig,
    pub fusion: FusionConfig,
    pub train: TrainSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            scenes: 1,
            scene_file: None,
            modes: vec![Mode::Single, Mode::ZeroShot],
            out: PathBuf::from("out"),
            params: None,
            calibration: None,
            write_grids: true,
            dump_messages: false,
            serial: false,
            generator: GeneratorConfig::default(),
            observation: ObservationModel::reduced(),
            episode: EpisodeSection::default(),
            splat: SplatConfig::default(),
            fusion: FusionConfig::default(),
            train: TrainSection::default(),
        }
    }
}

/// Values given on the command line; each one replaces the config value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub modes: Option<Vec<Mode>>,
    pub gaussians: Option<usize>,
    pub precision: Option<Precision>,
    pub budget_bytes: Option<u64>,
    pub rho: Option<f64>,
    pub pooling: Option<Pooling>,
    pub seed: Option<u64>,
    pub scenes: Option<usize>,
    pub scene_file: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub params: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub steps: Option<usize>,
    pub serial: bool,
    pub dump_messages: bool,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).context("invalid experiment config")?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(m) = &o.modes {
            self.modes = m.clone();
        }
        if let Some(n) = o.gaussians {
            self.observation.gaussians_per_agent = n;
        }
        if let Some(p) = o.precision {
            self.episode.precision = p;
        }
        if let Some(b) = o.budget_bytes {
            self.episode.budget_bytes = Some(b);
        }
        if let Some(r) = o.rho {
            self.fusion.radius_rho = r;
        }
        if let Some(p) = o.pooling {
            self.fusion.pooling = p;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(n) = o.scenes {
            self.scenes = n;
        }
        if let Some(p) = &o.scene_file {
            self.scene_file = Some(p.clone());
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        if let Some(p) = &o.params {
            self.params = Some(p.clone());
        }
        if let Some(p) = &o.calibration {
            self.calibration = Some(p.clone());
        }
        if let Some(s) = o.steps {
            self.train.steps = s;
        }
        self.serial |= o.serial;
        self.dump_messages |= o.dump_messages;
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            splat: self.splat,
            fusion: self.fusion,
            precision: self.episode.precision,
            budget_bytes: self.episode.budget_bytes,
            keep_received: self.episode.keep_received,
            empty_weight: self.episode.empty_weight,
            ..EpisodeConfig::default()
        }
    }

    /// Checks everything `run` needs.
    pub fn validate_run(&self) -> Result<()> {
        self.validate_common()?;
        if self.modes.is_empty() {
            bail!("no modes selected");
        }
        if self.scene_file.is_none() && self.scenes == 0 {
            bail!("scenes must be >= 1");
        }
        if let Some(p) = &self.scene_file {
            ensure_file(p, "scene_file")?;
        }
        if self.modes.contains(&Mode::Learned) {
            match &self.params {
                Some(p) => ensure_file(p, "params")?,
                None => bail!("the learned mode needs a params file (--params)"),
            }
        }
        if self.modes.contains(&Mode::Naive) {
            match &self.calibration {
                Some(p) => ensure_file(p, "calibration")?,
                None => bail!("the naive mode needs a calibration file (--calibration)"),
            }
        }
        Ok(())
    }

    pub fn validate_train(&self) -> Result<()> {
        self.validate_common()?;
        if self.train.train_scenes == 0 {
            bail!("train_scenes must be >= 1");
        }
        self.train.train_config(self.seed, self.train.steps).validate()?;
        Ok(())
    }

    fn validate_common(&self) -> Result<()> {
        self.observation.validate()?;
        self.splat.validate()?;
        self.fusion.validate()?;
        if !(self.episode.empty_weight >= 0.0 && self.episode.empty_weight.is_finite()) {
            bail!("empty_weight must be >= 0");
        }
        Ok(())
    }
}

fn ensure_file(p: &Path, what: &str) -> Result<()> {
    if !p.is_file() {
        bail!("{what} file {} does not exist", p.display());
    }
    Ok(())
}

/// Parses `single,zero_shot,...`.
pub fn parse_modes(s: &str) -> Result<Vec<Mode>> {
    let mut modes = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let m: Mode = part.parse()?;
        if !modes.contains(&m) {
            modes.push(m);
        }
    }
    if modes.is_empty() {
        bail!("no modes in {s:?}");
    }
    Ok(modes)
}
