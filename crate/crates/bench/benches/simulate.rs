use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hawkes_core::experiments::SyntheticRecipe;
use hawkes_core::simulate::{simulate_cluster, simulate_thinning};
use hawkes_core::SimConfig;

fn bench_simulators(c: &mut Criterion) {
    let instance = SyntheticRecipe::exponential(5).with_seed(2).generate().expect("stationary instance");
    let mut group = c.benchmark_group("simulate");
    group.sample_size(20);
    for horizon in [1_000.0, 10_000.0] {
        group.bench_with_input(BenchmarkId::new("cluster", horizon), &horizon, |b, &t| {
            b.iter(|| simulate_cluster(&instance.spec, &instance.truth, t, &SimConfig::new(5)).expect("simulation"))
        });
        group.bench_with_input(BenchmarkId::new("thinning", horizon), &horizon, |b, &t| {
            b.iter(|| simulate_thinning(&instance.spec, &instance.truth, t, &SimConfig::new(5)).expect("simulation"))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_simulators);
criterion_main!(benches);
