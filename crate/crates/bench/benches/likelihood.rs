use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hawkes_core::experiments::SyntheticRecipe;

fn bench_objective_and_gradient(c: &mut Criterion) {
    let mut group = c.benchmark_group("regularized_gradient");
    group.sample_size(20);
    for dim in [2usize, 5, 10] {
        let mut recipe = SyntheticRecipe::exponential(dim).with_seed(1);
        recipe.horizon = 500.0;
        let instance = recipe.generate().expect("stationary instance");
        let events = instance.simulate(11).expect("simulation");
        let n = events.len();
        let problem = instance.problem(events).expect("problem");
        group.bench_with_input(BenchmarkId::new(format!("k{dim}"), n), &instance.init, |b, init| {
            b.iter(|| problem.grad_regularized(init).expect("gradient"))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_objective_and_gradient);
criterion_main!(benches);
