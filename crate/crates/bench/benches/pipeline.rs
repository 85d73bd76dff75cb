use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use gscoop::comms::{deserialize_message, serialize_message, GaussianMessage};
use gscoop::fusion::{fuse_scene, FusionParams};
use gscoop::learn::{splat_backward, total_loss};
use gscoop::splat::splat;
use gscoop::Precision;
use gscoop_bench::fixture;

fn bench_splat(c: &mut Criterion) {
    let (_, inputs, cfg) = fixture(6400);
    c.bench_function("splat 6400", |b| {
        b.iter(|| splat(black_box(&inputs.own), &cfg.geometry, &cfg.splat).unwrap())
    });
}

fn bench_fusion(c: &mut Criterion) {
    let (_, inputs, cfg) = fixture(6400);
    let params = FusionParams::init(0);
    c.bench_function("fuse_scene 6400", |b| {
        b.iter(|| fuse_scene(black_box(&inputs.own), &inputs.received, &cfg.fusion, &params).unwrap())
    });
}

fn bench_loss_backward(c: &mut Criterion) {
    let (scene, inputs, cfg) = fixture(6400);
    let grid = splat(&inputs.own, &cfg.geometry, &cfg.splat).unwrap();
    let labels = &scene.ground_truth.collaborative[0].labels;
    c.bench_function("loss + splat backward 6400", |b| {
        b.iter(|| {
            let (_, d) = total_loss(&grid.data, grid.num_classes, labels).unwrap();
            splat_backward(&inputs.own, &cfg.geometry, &cfg.splat, &d, grid.num_classes).unwrap()
        })
    });
}

fn bench_wire(c: &mut Criterion) {
    let (_, inputs, _) = fixture(6400);
    let msg = GaussianMessage {
        sender_id: 1,
        receiver_id: 0,
        frame_tag: 0,
        precision: Precision::Fp16,
        gaussians: inputs.own.clone(),
    };
    let bytes = serialize_message(&msg).unwrap();
    c.bench_function("serialize fp16 6400", |b| b.iter(|| serialize_message(black_box(&msg)).unwrap()));
    c.bench_function("deserialize fp16 6400", |b| {
        b.iter_batched(|| bytes.clone(), |v| deserialize_message(&v).unwrap(), BatchSize::SmallInput)
    });
}

criterion_group!(benches, bench_splat, bench_fusion, bench_loss_backward, bench_wire);
criterion_main!(benches);
