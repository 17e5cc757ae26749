use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mdg_bench::{embedding_cloud, random_triplet};
use mdg_core::diffusion::NoiseSchedule;
use mdg_core::{
    frechet_distance, gram, make_world, mdg_sample, GuidanceConfig, GuidanceMode, Modality, SamplingContext,
    WorldParams,
};
use std::hint::black_box;

fn geometry(c: &mut Criterion) {
    let (v, a, p) = random_triplet(16, 7);
    c.bench_function("volume/d16", |b| b.iter(|| gram(black_box(&v), &a, &p).unwrap().volume().unwrap()));
    c.bench_function("volume_grad/d16", |b| {
        b.iter(|| gram(black_box(&v), &a, &p).unwrap().volume_grad(Modality::Audio, 1e-6).unwrap())
    });
}

fn sampling(c: &mut Criterion) {
    let world = make_world(WorldParams::default()).unwrap();
    let schedule = NoiseSchedule::default();
    let ctx = SamplingContext::from_world(&world, &schedule, 30);
    let (ev, ep) = world.emit_condition(3, 11).unwrap();
    let mut group = c.benchmark_group("mdg_sample");
    for mode in [GuidanceMode::None, GuidanceMode::Pairwise, GuidanceMode::Volume] {
        let config = GuidanceConfig::with_mode(mode);
        group.bench_with_input(BenchmarkId::from_parameter(mode), &config, |b, config| {
            b.iter(|| mdg_sample(&ctx, 3, &ev, &ep, config, black_box(5)).unwrap())
        });
    }
    let live = GuidanceConfig { detach_denoiser: false, ..GuidanceConfig::default() };
    group.bench_function("volume-through-denoiser", |b| {
        b.iter(|| mdg_sample(&ctx, 3, &ev, &ep, &live, black_box(5)).unwrap())
    });
    group.finish();
}

fn frechet(c: &mut Criterion) {
    let a = embedding_cloud(200, 16, 1);
    let b = embedding_cloud(200, 16, 2);
    c.bench_function("frechet/200x16", |bench| bench.iter(|| frechet_distance(black_box(&a), &b).unwrap()));
}

criterion_group!(benches, geometry, sampling, frechet);
criterion_main!(benches);
