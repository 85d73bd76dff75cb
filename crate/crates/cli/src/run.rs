//! The `run` subcommand: simulate scenes, run every mode, score and write
//! artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

use gscoop::comms::{communication_volume, VolumeReport};
use gscoop::learn::Calibration;
use gscoop::metrics::{EvalReport, Evaluator};
use gscoop::sim::{derive_seed, generate_scene, run_episode, LearnedState, Mode, Scene, SceneSpec};
use gscoop::{CommStats, FusionParams, VoxelGrid};

use crate::config::ExperimentConfig;
use crate::report::{fmt_opt, report_header, report_fields};

/// Scores of one mode on one scene.
#[derive(Clone, Debug)]
pub struct SceneResult {
    pub scene: usize,
    pub scene_seed: u64,
    pub mode: Mode,
    pub eval: Evaluator,
    pub stats: CommStats,
}

/// Everything `run` computes, before anything is written.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub rows: Vec<SceneResult>,
    /// Dataset-level scores per mode, in the configured mode order.
    pub summary: Vec<(Mode, EvalReport, VolumeReport)>,
}

/// The scene specs of a run: the scene file, or `scenes` generated specs
/// seeded from `(seed, "scene", i)`.
pub fn scene_specs(cfg: &ExperimentConfig) -> Result<Vec<SceneSpec>> {
    if let Some(path) = &cfg.scene_file {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let spec = SceneSpec::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
        return Ok(vec![spec]);
    }
    generated_specs(cfg, "scene", cfg.scenes)
}

pub fn generated_specs(cfg: &ExperimentConfig, stream: &str, n: usize) -> Result<Vec<SceneSpec>> {
    (0..n)
        .map(|i| Ok(generate_scene(derive_seed(cfg.seed, stream, i as u64), &cfg.generator)?))
        .collect()
}

pub fn load_learned(cfg: &ExperimentConfig) -> Result<LearnedState> {
    let mut state = LearnedState::default();
    if cfg.modes.contains(&Mode::Learned) {
        if let Some(p) = &cfg.params {
            state.fusion = Some(FusionParams::load(p).with_context(|| format!("loading {}", p.display()))?);
        }
    }
    if cfg.modes.contains(&Mode::Naive) {
        if let Some(p) = &cfg.calibration {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            state.calibration = Some(Calibration::from_toml(&text)?);
        }
    }
    Ok(state)
}

/// Output files as `(path relative to the output directory, bytes)`.
type Files = Vec<(String, Vec<u8>)>;

/// Artifacts of one scene, kept in memory until the run is written.
struct SceneArtifacts {
    results: Vec<SceneResult>,
    grids: Files,
}

fn process_scene(
    index: usize,
    spec: SceneSpec,
    cfg: &ExperimentConfig,
    learned: &LearnedState,
) -> Result<SceneArtifacts> {
    let ep_cfg = cfg.episode_config();
    let scene_seed = spec.seed;
    let scene = Scene::prepare(spec, cfg.observation, &ep_cfg)?;
    let mut out = SceneArtifacts {
        results: Vec::new(),
        grids: Vec::new(),
    };
    if cfg.write_grids {
        for (a, gt) in scene.ground_truth.collaborative.iter().enumerate() {
            out.grids.push((
                format!("grids/s{index:03}_gt_a{a}.voxg"),
                VoxelGrid::Labels(gt.clone()).to_voxg_bytes(),
            ));
        }
    }
    let mut dumped = false;
    for &mode in &cfg.modes {
        let episode = run_episode(&scene, mode, &ep_cfg, learned)?;
        let mut eval = Evaluator::new();
        for (a, pred) in episode.predictions.iter().enumerate() {
            eval.add(pred, &scene.ground_truth.collaborative[a])?;
            if cfg.write_grids {
                out.grids.push((
                    format!("grids/s{index:03}_{mode}_a{a}.voxg"),
                    VoxelGrid::Labels(pred.clone()).to_voxg_bytes(),
                ));
            }
        }
        if cfg.dump_messages && !dumped && mode.is_collaborative() {
            for (s, r, bytes) in &episode.messages {
                out.grids.push((format!("messages/s{index:03}_{s}to{r}.gmsg"), bytes.clone()));
            }
            dumped = true;
        }
        out.results.push(SceneResult {
            scene: index,
            scene_seed,
            mode,
            eval,
            stats: episode.stats,
        });
    }
    Ok(out)
}

fn process_all(specs: Vec<SceneSpec>, cfg: &ExperimentConfig, learned: &LearnedState) -> Result<Vec<SceneArtifacts>> {
    let n = specs.len();
    let workers = if cfg.serial {
        1
    } else {
        std::thread::available_parallelism().map_or(1, |p| p.get()).min(n.max(1))
    };
    if workers <= 1 {
        return specs
            .into_iter()
            .enumerate()
            .map(|(i, s)| process_scene(i, s, cfg, learned))
            .collect();
    }
    let jobs: Vec<(usize, SceneSpec)> = specs.into_iter().enumerate().collect();
    let mut slots: Vec<Option<Result<SceneArtifacts>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let mine: Vec<(usize, SceneSpec)> =
                    jobs.iter().filter(|(i, _)| i % workers == w).cloned().collect();
                scope.spawn(move || {
                    mine.into_iter()
                        .map(|(i, s)| (i, process_scene(i, s, cfg, learned)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("scene worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every scene processed")).collect()
}

/// Runs the experiment without touching the filesystem (besides reading
/// inputs).
pub fn evaluate(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    Ok(evaluate_inner(cfg, false)?.0)
}

fn evaluate_inner(cfg: &ExperimentConfig, keep_artifacts: bool) -> Result<(RunOutcome, Files)> {
    cfg.validate_run()?;
    let learned = load_learned(cfg)?;
    let specs = scene_specs(cfg)?;
    let mut cfg = cfg.clone();
    if !keep_artifacts {
        cfg.write_grids = false;
        cfg.dump_messages = false;
    }
    let scenes = process_all(specs, &cfg, &learned)?;
    let mut rows = Vec::new();
    let mut files = Vec::new();
    for s in scenes {
        rows.extend(s.results);
        files.extend(s.grids);
    }
    let summary = cfg
        .modes
        .iter()
        .map(|&m| {
            let mut eval = Evaluator::new();
            let mut stats = CommStats::default();
            for r in rows.iter().filter(|r| r.mode == m) {
                eval.merge(&r.eval);
                stats.merge(&r.stats);
            }
            (m, eval.report(), communication_volume(&stats))
        })
        .collect();
    Ok((RunOutcome { rows, summary }, files))
}

/// Runs the experiment and writes `report.csv`, `summary.csv`,
/// `config.toml` and the grids into `cfg.out`.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let (outcome, files) = evaluate_inner(cfg, true)?;
    let out = &cfg.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (name, bytes) in &files {
        let path = out.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    }
    write_text(out, "report.csv", &report_csv(&outcome))?;
    write_text(out, "summary.csv", &summary_csv(&outcome))?;
    write_text(out, "config.toml", &cfg.to_toml()?)?;
    Ok(outcome)
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn report_csv(outcome: &RunOutcome) -> String {
    let mut s = format!("scene,scene_seed,{}\n", report_header());
    for r in &outcome.rows {
        let volume = communication_volume(&r.stats);
        let totals = r.stats.totals();
        writeln!(
            s,
            "{},{},{}",
            r.scene,
            r.scene_seed,
            report_fields(r.mode, &r.eval.report(), &volume, totals.messages_rejected)
        )
        .unwrap();
    }
    s
}

pub fn summary_csv(outcome: &RunOutcome) -> String {
    let mut s = format!("{}\n", report_header());
    for (mode, report, volume) in &outcome.summary {
        let rejected: u64 = outcome
            .rows
            .iter()
            .filter(|r| r.mode == *mode)
            .map(|r| r.stats.totals().messages_rejected)
            .sum();
        writeln!(s, "{}", report_fields(*mode, report, volume, rejected)).unwrap();
    }
    s
}

/// Human-readable per-mode table.
pub fn pretty_summary(outcome: &RunOutcome) -> String {
    let mut s = format!(
        "{:<10} {:>8} {:>8} {:>8} {:>8} {:>8} {:>12} {:>10}\n",
        "mode", "IoU", "mIoU", "veh", "road", "others", "bytes", "MB/msg"
    );
    for (mode, r, v) in &outcome.summary {
        writeln!(
            s,
            "{:<10} {:>8} {:>8} {:>8} {:>8} {:>8} {:>12} {:>10.4}",
            mode.name(),
            fmt_opt(r.iou, 4),
            fmt_opt(r.miou, 4),
            fmt_opt(r.bev_vehicle, 4),
            fmt_opt(r.bev_road, 4),
            fmt_opt(r.bev_others, 4),
            v.bytes_sent,
            v.mean_bytes_per_message / (1024.0 * 1024.0),
        )
        .unwrap();
    }
    s
}

pub fn mode_miou(outcome: &RunOutcome, mode: Mode) -> Option<f64> {
    outcome
        .summary
        .iter()
        .find(|(m, _, _)| *m == mode)
        .and_then(|(_, r, _)| r.miou)
}
