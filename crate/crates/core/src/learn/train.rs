//! Desk-scale trainers for the fusion weights and the naive-mode
//! calibration.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{FusionConfig, FusionParams};
use crate::gaussian::SemanticGaussian;
use crate::grid::GridGeometry;
use crate::learn::backprop::{splat_backward, FusionTape};
use crate::learn::loss::{total_loss, LossReport};
use crate::learn::naive::Calibration;
use crate::learn::optim::{AdamW, Schedule};
use crate::splat::{splat, SplatConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub schedule: Schedule,
    pub weight_decay: f64,
    /// Optimizer steps.
    pub steps: usize,
    /// Samples averaged per step.
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schedule: Schedule::default(),
            weight_decay: 0.01,
            steps: 500,
            batch: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// One ego view: what it observed, what it received and what it should
/// predict.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub own: Vec<SemanticGaussian>,
    pub received: Vec<SemanticGaussian>,
    /// Splatted after the trainable primitives (the empty-space primitive).
    pub background: Vec<SemanticGaussian>,
    pub labels: Vec<u8>,
    pub geometry: GridGeometry,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub report: LossReport,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<P> {
    pub params: P,
    pub curve: Vec<StepRecord>,
}

/// Sample order: a fresh seeded shuffle for every pass over the data.
struct Sampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Self {
        Sampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.sort_unstable();
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

fn mean_report(reports: &[LossReport]) -> LossReport {
    let n = reports.len() as f64;
    let c = reports[0].per_class_lovasz.len();
    let mut out = LossReport {
        ce: 0.0,
        lovasz: 0.0,
        total: 0.0,
        per_class_lovasz: vec![0.0; c],
    };
    for r in reports {
        out.ce += r.ce / n;
        out.lovasz += r.lovasz / n;
        for k in 0..c {
            out.per_class_lovasz[k] += r.per_class_lovasz[k] / n;
        }
    }
    out.total = out.ce + out.lovasz;
    out
}

/// Loss and parameter gradient of the learned mode on one sample.
pub fn fusion_loss_and_grad(
    params: &FusionParams,
    sample: &TrainSample,
    fusion: &FusionConfig,
    splat_cfg: &SplatConfig,
    keep_received: bool,
) -> Result<(LossReport, FusionParams)> {
    let mut tape = FusionTape::new();
    let fused = tape.forward(&sample.own, &sample.received, fusion, params)?;
    let mut set = fused.clone();
    if keep_received {
        set.extend(sample.received.iter().cloned());
    }
    set.extend(sample.background.iter().cloned());
    let channels = splat(&set, &sample.geometry, splat_cfg)?;
    let (report, d_channels) = total_loss(&channels.data, channels.num_classes, &sample.labels)?;
    let d_fused = splat_backward(&fused, &sample.geometry, splat_cfg, &d_channels, channels.num_classes)?;
    let grads = tape.backward_fusion(params, &d_fused)?;
    Ok((report, grads))
}

/// Loss of the learned mode on one sample.
pub fn fusion_loss(
    params: &FusionParams,
    sample: &TrainSample,
    fusion: &FusionConfig,
    splat_cfg: &SplatConfig,
    keep_received: bool,
) -> Result<LossReport> {
    let fused = crate::fusion::fuse_scene(&sample.own, &sample.received, fusion, params)?;
    let mut set = fused;
    if keep_received {
        set.extend(sample.received.iter().cloned());
    }
    set.extend(sample.background.iter().cloned());
    let channels = splat(&set, &sample.geometry, splat_cfg)?;
    Ok(total_loss(&channels.data, channels.num_classes, &sample.labels)?.0)
}

fn check_finite(step: usize, report: &LossReport, grad_norm: f64) -> Result<()> {
    if !report.total.is_finite() {
        return Err(Error::Diverged {
            step,
            detail: format!("loss is {} (ce {}, lovasz {})", report.total, report.ce, report.lovasz),
        });
    }
    if !grad_norm.is_finite() {
        return Err(Error::Diverged {
            step,
            detail: format!("gradient norm is {grad_norm}"),
        });
    }
    Ok(())
}

/// Trains fusion weights with AdamW on the learned-mode loss.
pub fn train_fusion(
    params: FusionParams,
    samples: &[TrainSample],
    fusion: &FusionConfig,
    splat_cfg: &SplatConfig,
    keep_received: bool,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainOutcome<FusionParams>> {
    cfg.validate()?;
    params.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("training needs at least one sample".into()));
    }
    let mut params = params;
    let mut opt = AdamW::new(params.as_slice().len(), cfg.weight_decay);
    let mut sampler = Sampler::new(samples.len(), cfg.seed);
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut grads = FusionParams::zeros();
        let mut reports = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let s = &samples[sampler.next()];
            let (report, g) = fusion_loss_and_grad(&params, s, fusion, splat_cfg, keep_received)?;
            grads.add_assign(&g);
            reports.push(report);
        }
        grads.scale(1.0 / cfg.batch as f64);
        let report = mean_report(&reports);
        check_finite(step, &report, grads.norm())?;
        let lr = cfg.schedule.lr(step, cfg.steps);
        opt.step(params.as_mut_slice(), grads.as_slice(), lr);
        if let Err(e) = params.validate() {
            return Err(Error::Diverged {
                step,
                detail: e.to_string(),
            });
        }
        let record = StepRecord { step, lr, report };
        on_step(&record);
        curve.push(record);
    }
    Ok(TrainOutcome { params, curve })
}

/// Trains the naive-mode calibration on the stacked (zero-shot) data path.
pub fn train_calibration(
    samples: &[TrainSample],
    splat_cfg: &SplatConfig,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainOutcome<Calibration>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("training needs at least one sample".into()));
    }
    let mut cal = Calibration::identity();
    let n = cal.gain.len();
    let mut flat: Vec<f64> = cal.gain.iter().chain(&cal.bias).copied().collect();
    let mut opt = AdamW::new(flat.len(), cfg.weight_decay);
    let mut sampler = Sampler::new(samples.len(), cfg.seed);
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut grads = vec![0.0; flat.len()];
        let mut reports = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let s = &samples[sampler.next()];
            let calibrated: Vec<SemanticGaussian> = s.received.iter().map(|g| cal.apply(g)).collect();
            let mut set = s.own.clone();
            set.extend(calibrated.iter().cloned());
            set.extend(s.background.iter().cloned());
            let channels = splat(&set, &s.geometry, splat_cfg)?;
            let (report, d_ch) = total_loss(&channels.data, channels.num_classes, &s.labels)?;
            let d_recv = splat_backward(&calibrated, &s.geometry, splat_cfg, &d_ch, channels.num_classes)?;
            let (dg, db) = cal.backward(&s.received, &d_recv);
            for k in 0..n {
                grads[k] += dg[k] / cfg.batch as f64;
                grads[n + k] += db[k] / cfg.batch as f64;
            }
            reports.push(report);
        }
        let report = mean_report(&reports);
        let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        check_finite(step, &report, norm)?;
        let lr = cfg.schedule.lr(step, cfg.steps);
        opt.step(&mut flat, &grads, lr);
        cal.gain.copy_from_slice(&flat[..n]);
        cal.bias.copy_from_slice(&flat[n..]);
        let record = StepRecord { step, lr, report };
        on_step(&record);
        curve.push(record);
    }
    Ok(TrainOutcome { params: cal, curve })
}

/// Writes `step,lr,ce,lovasz,total` rows.
pub fn write_loss_csv<W: Write>(mut w: W, curve: &[StepRecord]) -> Result<()> {
    writeln!(w, "step,lr,ce,lovasz,total")?;
    for r in curve {
        writeln!(
            w,
            "{},{:e},{:.9},{:.9},{:.9}",
            r.step, r.lr, r.report.ce, r.report.lovasz, r.report.total
        )?;
    }
    Ok(())
}
