use proptest::prelude::*;

use gscoop::classes::{NUM_CLASSES, NUM_SEMANTIC};
use gscoop::comms::{deserialize_message, serialize_message, transform_gaussian, wire_len, GaussianMessage};
use gscoop::fusion::features::{ego_features, relative_features};
use gscoop::fusion::{blend_weight, pooling_weights, FusionParams, HashGrid, InitPriors};
use gscoop::learn::{lovasz_extension, Calibration};
use gscoop::metrics::iou_3d;
use gscoop::splat::splat;
use gscoop::{GridGeometry, LabelGrid, Pooling, Precision, Quat, RigidTransform, SemanticGaussian, SplatConfig, Vec3};

fn vec3(lo: f64, hi: f64) -> impl Strategy<Value = Vec3> {
    (lo..hi, lo..hi, lo..hi).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn quat() -> impl Strategy<Value = Quat> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("non-degenerate", |(w, x, y, z)| w * w + x * x + y * y + z * z > 0.01)
        .prop_map(|(w, x, y, z)| Quat::new(w, x, y, z))
}

fn gaussian() -> impl Strategy<Value = SemanticGaussian> {
    (
        vec3(-3.0, 3.0),
        vec3(0.05, 1.0),
        quat(),
        0.0..=1.0f64,
        proptest::collection::vec(0.0..3.0f64, NUM_SEMANTIC),
    )
        .prop_map(|(m, s, q, a, c)| {
            let mut sem = [0.0; NUM_CLASSES];
            sem[..NUM_SEMANTIC].copy_from_slice(&c);
            SemanticGaussian::with_rotation(m, s, q, a, sem).unwrap()
        })
}

fn transform() -> impl Strategy<Value = RigidTransform> {
    (quat(), vec3(-20.0, 20.0)).prop_map(|(q, t)| RigidTransform::new(q.canonicalize().unwrap(), t).unwrap())
}

fn small_grid() -> GridGeometry {
    GridGeometry::new(Vec3::new(-2.0, -2.0, -1.0), 0.5, [8, 8, 4]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn transform_preserves_density_and_scale(g in gaussian(), t in transform(), x in vec3(-3.0, 3.0)) {
        let tg = transform_gaussian(&g, &t);
        prop_assert_eq!(tg.scale, g.scale);
        prop_assert!(tg.rotation.is_unit() && tg.rotation.is_canonical());
        let before = g.density(&x).unwrap();
        let after = tg.density(&t.apply(&x)).unwrap();
        for k in 0..NUM_CLASSES {
            let d = (before[k] - after[k]).abs();
            prop_assert!(d <= 1e-9 * before[k].abs() || d < 1e-300, "class {} {} vs {}", k, before[k], after[k]);
        }
    }

    #[test]
    fn transform_round_trip(g in gaussian(), t in transform()) {
        let back = transform_gaussian(&transform_gaussian(&g, &t), &t.inverse());
        prop_assert!((back.mean - g.mean).norm() < 1e-9);
        prop_assert!((back.covariance() - g.covariance()).norm() < 1e-9);
    }

    #[test]
    fn wire_round_trip_restores_invariants(
        gs in proptest::collection::vec(gaussian(), 0..20),
        sender in any::<u32>(),
        receiver in any::<u32>(),
        tag in any::<u32>(),
        fp16 in any::<bool>(),
    ) {
        let precision = if fp16 { Precision::Fp16 } else { Precision::Fp32 };
        let msg = GaussianMessage { sender_id: sender, receiver_id: receiver, frame_tag: tag, precision, gaussians: gs.clone() };
        let bytes = serialize_message(&msg).unwrap();
        prop_assert_eq!(bytes.len(), wire_len(gs.len(), precision));
        let back = deserialize_message(&bytes).unwrap();
        prop_assert_eq!((back.sender_id, back.receiver_id, back.frame_tag, back.precision), (sender, receiver, tag, precision));
        prop_assert_eq!(back.count(), gs.len());
        for (a, b) in back.gaussians.iter().zip(&gs) {
            prop_assert!(a.validate().is_ok());
            prop_assert!((a.mean - b.mean).norm() < 0.01 * (1.0 + b.mean.norm()));
        }
        // a second round trip moves nothing beyond renormalization noise
        let again = deserialize_message(&serialize_message(&back).unwrap()).unwrap();
        for (a, b) in again.gaussians.iter().zip(&back.gaussians) {
            prop_assert_eq!(a.mean, b.mean);
            prop_assert_eq!(a.scale, b.scale);
            prop_assert!((a.rotation.dot(b.rotation) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn splatting_is_additive_and_nonnegative(
        a in proptest::collection::vec(gaussian(), 0..6),
        b in proptest::collection::vec(gaussian(), 0..6),
    ) {
        let cfg = SplatConfig { truncation_sigma: 3.0, min_contribution: 0.0 };
        let geo = small_grid();
        let ga = splat(&a, &geo, &cfg).unwrap();
        let gb = splat(&b, &geo, &cfg).unwrap();
        let both: Vec<SemanticGaussian> = a.iter().chain(&b).cloned().collect();
        let gab = splat(&both, &geo, &cfg).unwrap();
        for i in 0..gab.data.len() {
            prop_assert!(gab.data[i] >= 0.0);
            prop_assert!((gab.data[i] - ga.data[i] - gb.data[i]).abs() <= 1e-12 * (1.0 + gab.data[i]));
        }
    }

    #[test]
    fn attention_weights_are_a_distribution(
        ego in gaussian(),
        nbrs in proptest::collection::vec(gaussian(), 1..10),
        seed in any::<u64>(),
    ) {
        let params = FusionParams::init_with(seed, &InitPriors { attention_std: 1.0, ..InitPriors::default() });
        let rel: Vec<_> = nbrs.iter().map(|n| relative_features(&ego, n)).collect();
        let w = pooling_weights(Pooling::Attention, &ego_features(&ego), &rel, &params);
        prop_assert!(w.iter().all(|x| *x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn hash_grid_matches_linear_scan(
        pts in proptest::collection::vec(vec3(-4.0, 4.0), 0..200),
        c in vec3(-4.0, 4.0),
        r in 0.0..2.0f64,
    ) {
        let grid = HashGrid::build(pts.iter().copied(), 0.4);
        let got: Vec<u32> = grid.within(&c, r).into_iter().map(|(_, i)| i).collect();
        let mut want: Vec<(f64, u32)> = pts.iter().enumerate()
            .map(|(i, p)| ((p - c).norm(), i as u32))
            .filter(|(d, _)| *d <= r)
            .collect();
        want.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        prop_assert_eq!(got, want.into_iter().map(|(_, i)| i).collect::<Vec<_>>());
    }

    #[test]
    fn blend_weight_is_a_convex_coefficient(a in proptest::collection::vec(0.0..5.0f64, NUM_CLASSES), b in proptest::collection::vec(0.0..5.0f64, NUM_CLASSES)) {
        let a: [f64; NUM_CLASSES] = a.try_into().unwrap();
        let b: [f64; NUM_CLASSES] = b.try_into().unwrap();
        let w = blend_weight(&a, &b, 1e-8);
        prop_assert!((0.0..=1.0).contains(&w));
    }

    #[test]
    fn lovasz_is_bounded(errors in proptest::collection::vec(0.0..=1.0f64, 1..40), seed in any::<u64>()) {
        let fg: Vec<bool> = (0..errors.len()).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
        let (loss, grad) = lovasz_extension(&errors, &fg);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&loss));
        prop_assert!(grad.iter().all(|g| *g >= -1e-12));
    }

    #[test]
    fn iou_values_are_fractions(a in proptest::collection::vec(0u8..13, 256), b in proptest::collection::vec(0u8..13, 256)) {
        let geo = GridGeometry::new(Vec3::zeros(), 1.0, [8, 8, 4]).unwrap();
        let mut pa = LabelGrid::empty(geo);
        let mut pb = LabelGrid::empty(geo);
        pa.labels.copy_from_slice(&a);
        pb.labels.copy_from_slice(&b);
        let r = iou_3d(&pa, &pb).unwrap();
        for v in r.per_class_iou.iter().flatten().chain(r.iou.iter()).chain(r.miou.iter()) {
            prop_assert!((0.0..=1.0).contains(v));
        }
        prop_assert_eq!(iou_3d(&pa, &pa).unwrap().iou.unwrap_or(1.0), 1.0);
    }

    #[test]
    fn calibration_output_stays_valid(g in gaussian(), gain in -2.0..2.0f64, bias in -1.0..1.0f64) {
        let cal = Calibration { gain: vec![gain; NUM_SEMANTIC], bias: vec![bias; NUM_SEMANTIC] };
        prop_assert!(cal.apply(&g).validate().is_ok());
    }
}
