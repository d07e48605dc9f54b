//! Data-parallel core versus a single worker. With the `parallel` feature the
//! "rayon" cases use the global pool and the "sequential" cases run the same
//! calls inside a one-thread pool. Build with `--no-default-features` to
//! measure the plain sequential fallback instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sisgan::nn::{Backbone, Head};
use sisgan::oracle::{synthesize_dataset, SimulationConfig};
use sisgan::signal::{compute_spectrum, SsvepClassTable, Window};
use sisgan::train::{eval_logits, NetworkConfig};

fn sim() -> SimulationConfig {
    SimulationConfig {
        n_subjects: 3,
        trials_per_class_per_subject: 10,
        channels: 4,
        time_steps: 256,
        sample_rate_hz: 128.0,
        ..SimulationConfig::default()
    }
}

#[cfg(feature = "parallel")]
fn modes() -> Vec<(&'static str, Option<rayon::ThreadPool>)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool");
    vec![("rayon", None), ("sequential", Some(one))]
}

#[cfg(not(feature = "parallel"))]
fn modes() -> Vec<(&'static str, Option<()>)> {
    vec![("sequential", None)]
}

#[cfg(feature = "parallel")]
fn run<R: Send>(pool: &Option<rayon::ThreadPool>, f: impl FnOnce() -> R + Send) -> R {
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn run<R>(_: &Option<()>, f: impl FnOnce() -> R) -> R {
    f()
}

fn bench(c: &mut Criterion) {
    let classes = SsvepClassTable::default();
    let cfg = sim();
    let data = synthesize_dataset(&cfg, &classes).expect("dataset");
    let arch = NetworkConfig::default();
    let (net, store) = Backbone::build(
        arch.backbone(cfg.channels, cfg.time_steps, Head::SsvepClassifier { n_classes: 3 }),
        0,
    )
    .expect("backbone");

    let mut g = c.benchmark_group("throughput");
    g.sample_size(10);
    for (name, pool) in modes() {
        g.bench_with_input(BenchmarkId::new("synthesize_dataset", name), &pool, |b, pool| {
            b.iter(|| run(pool, || synthesize_dataset(&cfg, &classes).expect("dataset")))
        });
        g.bench_with_input(BenchmarkId::new("class_spectrum", name), &pool, |b, pool| {
            b.iter(|| run(pool, || compute_spectrum(data.trials(), Window::Hann).expect("spectrum")))
        });
        g.bench_with_input(BenchmarkId::new("backbone_eval", name), &pool, |b, pool| {
            b.iter(|| run(pool, || eval_logits(&net, &store, &data).expect("logits")))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
