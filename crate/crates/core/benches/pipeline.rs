//! Parallel vs single-worker throughput of the heavy stages.
//!
//! Each workload runs inside a one-thread rayon pool and inside the default
//! pool. Build with `--no-default-features` to measure the sequential
//! fallback instead of a one-thread pool.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use medsem::channel::ChannelModel;
use medsem::diffusion::{reconstruct_volume, renderer_predictor, scaled_linear, SigmaRule};
use medsem::harness::{run_pipeline, PipelineConfig};
use medsem::phantom::{generate_phantom, normalize_hu, PhantomSpec};
use medsem::semantics::{extract_edges, extract_segmentation, CannyParams};
use medsem::volume::Dims;
use rayon::ThreadPool;

fn pools() -> Vec<(String, ThreadPool)> {
    let all = rayon::current_num_threads();
    let mut sizes = vec![1];
    if all > 1 {
        sizes.push(all);
    }
    sizes
        .into_iter()
        .map(|n| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap();
            (format!("{n}-thread"), pool)
        })
        .collect()
}

fn stages(c: &mut Criterion) {
    let dims = Dims::new(16, 64, 64);
    let spec = PhantomSpec::abdominal(0, dims);
    let (raw, gt) = generate_phantom(&spec).unwrap();
    let ct = normalize_hu(&raw).unwrap();
    let seg = extract_segmentation(&gt);
    let edges = extract_edges(&ct, &CannyParams::default()).unwrap();
    let renderer = renderer_predictor(spec.intensity_table()).unwrap();
    let schedule = scaled_linear(50, SigmaRule::Beta).unwrap();

    let mut group = c.benchmark_group("stages");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new("canny", &name), |b| {
            b.iter(|| pool.install(|| extract_edges(&ct, &CannyParams::default()).unwrap()))
        });
        group.bench_function(BenchmarkId::new("reconstruct", &name), |b| {
            b.iter(|| {
                pool.install(|| reconstruct_volume(&seg, &edges, &renderer, &schedule, 7).unwrap())
            })
        });
        group.bench_function(BenchmarkId::new("pipeline_bitflip", &name), |b| {
            let cfg = PipelineConfig {
                channel: ChannelModel::BitFlip { p: 0.1 },
                ..Default::default()
            };
            b.iter(|| pool.install(|| run_pipeline(&cfg).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, stages);
criterion_main!(benches);
