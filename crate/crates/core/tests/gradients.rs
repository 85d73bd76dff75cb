//! Analytic gradients against central finite differences, and the Lovász
//! extension against set-counting Jaccard.

use gscoop::classes::NUM_CLASSES;
use gscoop::fusion::{fuse_scene_traced, FusionConfig, FusionParams, GaussianGrad, InitPriors, Tensor};
use gscoop::learn::{
    cross_entropy, fusion_loss, fusion_loss_and_grad, lovasz_extension, lovasz_softmax, softmax_probs,
    splat_backward, total_loss, train_fusion, Schedule, TrainConfig, TrainSample,
};
use gscoop::splat::splat;
use gscoop::{GridGeometry, Pooling, Quat, SemanticGaussian, SplatConfig, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REL_TOL: f64 = 1e-4;
const ABS_FLOOR: f64 = 1e-8;

fn agree(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= REL_TOL * analytic.abs().max(numeric.abs()) || diff <= ABS_FLOOR
}

enum Check {
    Agree,
    /// The perturbation crosses a kink: halving the step changes the
    /// estimate.
    Kink,
    Mismatch(f64),
}

/// Compares `analytic` with the central difference of `f` at `x[i]`.
fn check(analytic: f64, x: &mut [f64], i: usize, h: f64, f: &mut impl FnMut(&[f64]) -> f64) -> Check {
    let x0 = x[i];
    let mut diff = |h: f64, x: &mut [f64]| {
        x[i] = x0 + h;
        let up = f(x);
        x[i] = x0 - h;
        let down = f(x);
        x[i] = x0;
        (up - down) / (2.0 * h)
    };
    let full = diff(h, x);
    if agree(analytic, full) {
        return Check::Agree;
    }
    let half = diff(0.5 * h, x);
    let spread = (full - half).abs();
    if spread > 1e-3 * full.abs().max(half.abs()) && spread > ABS_FLOOR {
        Check::Kink
    } else {
        Check::Mismatch(full)
    }
}

/// Checks every coordinate of `analytic` against central differences of `f`
/// and returns how many kinks were skipped.
fn check_all(analytic: &[f64], x: &mut [f64], h: f64, f: &mut impl FnMut(&[f64]) -> f64, what: &str) -> usize {
    let mut kinks = 0;
    for i in 0..x.len() {
        match check(analytic[i], x, i, h, f) {
            Check::Agree => {}
            Check::Kink => kinks += 1,
            Check::Mismatch(num) => panic!("{what} {i}: analytic {} vs numeric {num}", analytic[i]),
        }
    }
    kinks
}

fn random_gaussian(rng: &mut ChaCha8Rng, center: Vec3) -> SemanticGaussian {
    let mean = center + Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
    let scale = Vec3::new(rng.random_range(0.2..0.5), rng.random_range(0.2..0.5), rng.random_range(0.2..0.5));
    let q = Quat::new(
        rng.random_range(0.5..1.0),
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.5..0.5),
    );
    let mut sem = [0.0; NUM_CLASSES];
    for s in sem.iter_mut().take(NUM_CLASSES - 1) {
        *s = rng.random_range(0.0..2.0);
    }
    SemanticGaussian::with_rotation(mean, scale, q, rng.random_range(0.3..0.95), sem).unwrap()
}

fn geometry() -> GridGeometry {
    GridGeometry::new(Vec3::new(-1.2, -1.2, -0.8), 0.4, [6, 6, 4]).unwrap()
}

/// Smooth splatting: no truncation, no floor.
fn smooth_splat() -> SplatConfig {
    SplatConfig {
        truncation_sigma: 50.0,
        min_contribution: 0.0,
    }
}

/// The two-agent fixture: four ego primitives, each with one received
/// neighbour within the fusion radius.
fn fixture(seed: u64) -> TrainSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = [
        Vec3::new(-0.5, -0.5, 0.0),
        Vec3::new(0.5, -0.4, 0.1),
        Vec3::new(-0.4, 0.5, -0.1),
        Vec3::new(0.5, 0.5, 0.2),
    ];
    let own: Vec<SemanticGaussian> = centers.iter().map(|c| random_gaussian(&mut rng, *c)).collect();
    let received: Vec<SemanticGaussian> = own
        .iter()
        .map(|g| {
            let mut r = random_gaussian(&mut rng, g.mean);
            r.mean = g.mean + Vec3::new(0.1, -0.05, 0.08);
            r
        })
        .collect();
    let geometry = geometry();
    let labels = (0..geometry.num_voxels()).map(|_| rng.random_range(0..NUM_CLASSES as u8)).collect();
    TrainSample {
        own,
        received,
        background: Vec::new(),
        labels,
        geometry,
    }
}

fn random_params(seed: u64) -> FusionParams {
    FusionParams::init_with(
        seed,
        &InitPriors {
            out_weight_std: 0.2,
            attention_std: 0.4,
            ..InitPriors::default()
        },
    )
}

fn fusion_config(pooling: Pooling) -> FusionConfig {
    FusionConfig {
        pooling,
        ..FusionConfig::default()
    }
}

#[test]
fn cross_entropy_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 20;
    let mut channels: Vec<f64> = (0..n * NUM_CLASSES).map(|_| rng.random_range(-2.0..2.0)).collect();
    let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..NUM_CLASSES as u8)).collect();
    let probs = softmax_probs(&channels, NUM_CLASSES);
    let (_, d_probs_free) = cross_entropy(&probs, &labels).unwrap();
    // the CE gradient is reported w.r.t. the channels
    let mut f = |x: &[f64]| cross_entropy(&softmax_probs(x, NUM_CLASSES), &labels).unwrap().0;
    assert_eq!(check_all(&d_probs_free, &mut channels, 1e-6, &mut f, "channel"), 0);
}

#[test]
fn lovasz_matches_finite_differences_away_from_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 30;
    let mut channels: Vec<f64> = (0..n * NUM_CLASSES).map(|_| rng.random_range(-3.0..3.0)).collect();
    let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..4)).collect();
    let (_, grad) = total_loss(&channels, NUM_CLASSES, &labels).unwrap();
    let mut f = |x: &[f64]| total_loss(x, NUM_CLASSES, &labels).unwrap().0.total;
    let kinks = check_all(&grad, &mut channels, 1e-7, &mut f, "channel");
    assert!(kinks * 100 <= channels.len(), "{kinks} kinks");

    // the extension alone, on errors with well separated values
    let errors: Vec<f64> = (0..12).map(|i| 0.05 + 0.07 * ((i * 7) % 12) as f64).collect();
    let fg: Vec<bool> = (0..12).map(|i| i % 3 == 0).collect();
    let (_, d) = lovasz_extension(&errors, &fg);
    let mut e = errors.clone();
    let mut f = |x: &[f64]| lovasz_extension(x, &fg).0;
    assert_eq!(check_all(&d, &mut e, 1e-6, &mut f, "error"), 0);
}

#[test]
fn lovasz_equals_one_minus_jaccard_on_every_binary_labeling() {
    for truth in 0u32..16 {
        for pred in 0u32..16 {
            let fg: Vec<bool> = (0..4).map(|i| truth >> i & 1 == 1).collect();
            let p: Vec<bool> = (0..4).map(|i| pred >> i & 1 == 1).collect();
            let errors: Vec<f64> = (0..4).map(|i| if fg[i] != p[i] { 1.0 } else { 0.0 }).collect();
            let inter = (0..4).filter(|&i| fg[i] && p[i]).count() as f64;
            let union = (0..4).filter(|&i| fg[i] || p[i]).count() as f64;
            let expected = if union == 0.0 { 0.0 } else { 1.0 - inter / union };
            let (loss, _) = lovasz_extension(&errors, &fg);
            assert_eq!(loss, expected, "truth {truth:04b} pred {pred:04b}");
        }
    }
}

#[test]
fn lovasz_of_hard_two_class_predictions() {
    // class 0 predicted everywhere, truth has one voxel of class 1
    let probs = gscoop::learn::ClassProbs {
        num_classes: 2,
        data: vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
    };
    let l = lovasz_softmax(&probs, &[0, 0, 0, 1]).unwrap();
    // class 0: 1 - 3/4, class 1: 1 - 0/1
    assert_eq!(l.per_class, vec![0.25, 1.0]);
    assert_eq!(l.loss, 0.625);
}

#[test]
fn splat_backward_matches_finite_differences() {
    let s = fixture(11);
    let cfg = smooth_splat();
    let g = &s.geometry;
    let grid = splat(&s.own, g, &cfg).unwrap();
    let (_, d_ch) = total_loss(&grid.data, grid.num_classes, &s.labels).unwrap();
    let grads = splat_backward(&s.own, g, &cfg, &d_ch, grid.num_classes).unwrap();
    let loss_of = |set: &[SemanticGaussian]| {
        let grid = splat(set, g, &cfg).unwrap();
        total_loss(&grid.data, grid.num_classes, &s.labels).unwrap().0.total
    };
    for (k, d) in grads.iter().enumerate() {
        let mut x = [
            s.own[k].mean.x,
            s.own[k].mean.y,
            s.own[k].mean.z,
            s.own[k].scale.x,
            s.own[k].scale.y,
            s.own[k].scale.z,
            s.own[k].opacity,
        ];
        let analytic = [d.mean[0], d.mean[1], d.mean[2], d.scale[0], d.scale[1], d.scale[2], d.opacity];
        let mut f = |x: &[f64]| {
            let mut set = s.own.clone();
            set[k].mean = Vec3::new(x[0], x[1], x[2]);
            set[k].scale = Vec3::new(x[3], x[4], x[5]);
            set[k].opacity = x[6];
            loss_of(&set)
        };
        assert_eq!(check_all(&analytic, &mut x, 1e-6, &mut f, &format!("gaussian {k} attribute")), 0);
    }
}

fn check_fusion_params(pooling: Pooling, keep_received: bool) {
    let s = fixture(21);
    let fusion = fusion_config(pooling);
    let cfg = smooth_splat();
    let params = random_params(4);
    let (_, grads) = fusion_loss_and_grad(&params, &s, &fusion, &cfg, keep_received).unwrap();
    let mut x = params.as_slice().to_vec();
    let mut f = |x: &[f64]| {
        let mut p = FusionParams::zeros();
        p.as_mut_slice().copy_from_slice(x);
        fusion_loss(&p, &s, &fusion, &cfg, keep_received).unwrap().total
    };
    let kinks = check_all(grads.as_slice(), &mut x, 1e-6, &mut f, "param");
    assert!(kinks * 1000 <= x.len(), "{kinks} kinks");
    let informative = grads.as_slice().iter().filter(|g| g.abs() > 1e-6).count();
    assert!(informative > x.len() / 10, "only {informative} informative gradients");
}

#[test]
fn fusion_gradients_match_finite_differences_with_attention() {
    check_fusion_params(Pooling::Attention, false);
}

#[test]
fn fusion_gradients_match_finite_differences_with_mean_pooling_and_received() {
    check_fusion_params(Pooling::Mean, true);
}

#[test]
fn attention_projections_are_dead_under_mean_pooling() {
    let s = fixture(8);
    let (_, grads) =
        fusion_loss_and_grad(&random_params(2), &s, &fusion_config(Pooling::Mean), &smooth_splat(), false).unwrap();
    assert!(grads.tensor(Tensor::Q).iter().all(|g| *g == 0.0));
    assert!(grads.tensor(Tensor::K).iter().all(|g| *g == 0.0));
    assert!(grads.tensor(Tensor::W1).iter().any(|g| *g != 0.0));
}

#[test]
fn zero_upstream_gradient_gives_zero_parameter_gradient() {
    let s = fixture(9);
    let params = random_params(1);
    let (_, trace) = fuse_scene_traced(&s.own, &s.received, &fusion_config(Pooling::Attention), &params).unwrap();
    let zeros = vec![GaussianGrad::default(); s.own.len()];
    let grads = trace.backward(&params, &zeros).unwrap();
    assert!(grads.as_slice().iter().all(|g| *g == 0.0));
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let s = fixture(10);
    let params = random_params(3);
    let cfg = TrainConfig {
        schedule: Schedule {
            peak_lr: 0.0,
            ..Schedule::default()
        },
        steps: 5,
        ..TrainConfig::default()
    };
    let out = train_fusion(
        params.clone(),
        std::slice::from_ref(&s),
        &fusion_config(Pooling::Attention),
        &smooth_splat(),
        false,
        &cfg,
        |_| {},
    )
    .unwrap();
    assert_eq!(out.params, params);
    let first = out.curve[0].report.total;
    assert!(out.curve.iter().all(|r| r.report.total == first));
}
