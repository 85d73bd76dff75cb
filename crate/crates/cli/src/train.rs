//! The `train` subcommand: fit fusion weights (and the naive calibration) on
//! generated training scenes, then compare against zero-shot stacking on
//! held-out scenes.

use std::fs;

use anyhow::{Context, Result};

use gscoop::learn::{train_calibration, train_fusion, write_loss_csv, Calibration, StepRecord, TrainSample};
use gscoop::metrics::Evaluator;
use gscoop::sim::{derive_seed, empty_space_gaussian, prepare_ego, run_episode, LearnedState, Mode, Scene};
use gscoop::FusionParams;

use crate::config::ExperimentConfig;
use crate::report::fmt_opt;
use crate::run::generated_specs;

/// One ego view per (scene, agent), supervised by the collaborative ground
/// truth.
pub fn build_samples(cfg: &ExperimentConfig, scenes: &[Scene]) -> Result<Vec<TrainSample>> {
    let ep = cfg.episode_config();
    let mut samples = Vec::new();
    for scene in scenes {
        for ego in 0..scene.num_agents() {
            let inputs = prepare_ego(scene, ego, &ep)?;
            samples.push(TrainSample {
                own: inputs.own,
                received: inputs.received,
                background: vec![empty_space_gaussian(&ep.roi, ep.empty_weight)],
                labels: scene.ground_truth.collaborative[ego].labels.clone(),
                geometry: ep.geometry,
            });
        }
    }
    Ok(samples)
}

pub fn prepare_scenes(cfg: &ExperimentConfig, stream: &str, n: usize) -> Result<Vec<Scene>> {
    let ep = cfg.episode_config();
    generated_specs(cfg, stream, n)?
        .into_iter()
        .map(|s| Ok(Scene::prepare(s, cfg.observation, &ep)?))
        .collect()
}

/// mIoU of `mode` over `scenes` against the collaborative ground truth.
pub fn score(cfg: &ExperimentConfig, scenes: &[Scene], mode: Mode, learned: &LearnedState) -> Result<Option<f64>> {
    let ep = cfg.episode_config();
    let mut eval = Evaluator::new();
    for scene in scenes {
        let episode = run_episode(scene, mode, &ep, learned)?;
        for (a, pred) in episode.predictions.iter().enumerate() {
            eval.add(pred, &scene.ground_truth.collaborative[a])?;
        }
    }
    Ok(eval.report().miou)
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub params: FusionParams,
    pub calibration: Option<Calibration>,
    pub curve: Vec<StepRecord>,
    pub calibration_curve: Vec<StepRecord>,
    /// `(mode, train mIoU, holdout mIoU)`.
    pub comparison: Vec<(Mode, Option<f64>, Option<f64>)>,
}

/// Trains without writing anything. `log` receives progress lines.
pub fn train(cfg: &ExperimentConfig, mut log: impl FnMut(&str)) -> Result<TrainResult> {
    cfg.validate_train()?;
    let t = &cfg.train;
    let train_scenes = prepare_scenes(cfg, "train", t.train_scenes)?;
    let samples = build_samples(cfg, &train_scenes)?;
    let init = FusionParams::init(derive_seed(cfg.seed, "init", 0));
    let tc = t.train_config(cfg.seed, t.steps);
    let every = (t.steps / 20).max(1);
    let outcome = train_fusion(init, &samples, &cfg.fusion, &cfg.splat, cfg.episode.keep_received, &tc, |r| {
        if r.step % every == 0 || r.step + 1 == t.steps {
            log(&format!(
                "step {:>4}  lr {:.2e}  ce {:.4}  lovasz {:.4}  total {:.4}",
                r.step, r.lr, r.report.ce, r.report.lovasz, r.report.total
            ));
        }
    })?;
    let (calibration, calibration_curve) = if t.calibration_steps > 0 {
        let cc = t.train_config(cfg.seed, t.calibration_steps);
        let out = train_calibration(&samples, &cfg.splat, &cc, |_| {})?;
        (Some(out.params), out.curve)
    } else {
        (None, Vec::new())
    };
    let learned = LearnedState {
        fusion: Some(outcome.params.clone()),
        calibration: calibration.clone(),
    };
    let holdout = prepare_scenes(cfg, "scene", t.holdout_scenes)?;
    let mut modes = vec![Mode::Single, Mode::ZeroShot];
    if calibration.is_some() {
        modes.push(Mode::Naive);
    }
    modes.push(Mode::Learned);
    let mut comparison = Vec::new();
    for m in modes {
        let tr = score(cfg, &train_scenes, m, &learned)?;
        let ho = if holdout.is_empty() {
            None
        } else {
            score(cfg, &holdout, m, &learned)?
        };
        comparison.push((m, tr, ho));
    }
    Ok(TrainResult {
        params: outcome.params,
        calibration,
        curve: outcome.curve,
        calibration_curve,
        comparison,
    })
}

pub fn comparison_csv(result: &TrainResult) -> String {
    let mut s = String::from("mode,train_miou,holdout_miou\n");
    for (m, tr, ho) in &result.comparison {
        s.push_str(&format!("{},{},{}\n", m.name(), fmt_opt(*tr, 6), fmt_opt(*ho, 6)));
    }
    s
}

/// Trains and writes `params.fprm`, `loss.csv`, `calibration.toml`,
/// `calibration_loss.csv` and `train_summary.csv` into `cfg.out`.
pub fn cmd_train(cfg: &ExperimentConfig, log: impl FnMut(&str)) -> Result<TrainResult> {
    let result = train(cfg, log)?;
    let out = &cfg.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    result.params.save(&out.join("params.fprm"))?;
    write_loss_csv(fs::File::create(out.join("loss.csv"))?, &result.curve)?;
    if let Some(c) = &result.calibration {
        fs::write(out.join("calibration.toml"), c.to_toml()?)?;
        write_loss_csv(fs::File::create(out.join("calibration_loss.csv"))?, &result.calibration_curve)?;
    }
    fs::write(out.join("train_summary.csv"), comparison_csv(&result))?;
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    Ok(result)
}
