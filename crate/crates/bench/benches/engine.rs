use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use scmdyn_bench::{bandit_graph, lending_graph};
use scmdyn_core::lending::{threshold_search, Criterion as Fairness, GroupModel, LendingParams, PlanningCurve, ThresholdSearch};
use scmdyn_core::{abduct, sample_worlds};

fn sampling(c: &mut Criterion) {
    let mut group = c.benchmark_group("sample_worlds");
    let bandit = bandit_graph();
    group.throughput(Throughput::Elements(5000));
    group.bench_function("bandit/5000", |b| b.iter(|| sample_worlds(black_box(&bandit), 5000, 1).unwrap()));
    for steps in [1, 5] {
        let g = lending_graph(10_000, steps);
        group.throughput(Throughput::Elements(10_000 * steps as u64));
        group.bench_with_input(BenchmarkId::new("lending_10k_units", steps), &g, |b, g| {
            b.iter(|| sample_worlds(black_box(g), 1, 1).unwrap())
        });
    }
    group.finish();
}

fn abduction(c: &mut Criterion) {
    let g = lending_graph(10_000, 3);
    let w = sample_worlds(&g, 1, 2).unwrap().remove(0);
    c.bench_function("abduct/lending_10k_units_3_steps", |b| b.iter(|| abduct(black_box(&g), &w).unwrap()));
}

fn thresholds(c: &mut Criterion) {
    let groups = GroupModel::default();
    let params = LendingParams::default();
    let search = ThresholdSearch::default();
    let mut group = c.benchmark_group("threshold_search");
    for crit in [Fairness::MaxProf, Fairness::DemPar, Fairness::EqOpp] {
        group.bench_function(crit.as_str(), |b| {
            b.iter(|| threshold_search(crit, &groups, &params, &search, PlanningCurve::ByGroup).unwrap())
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = sampling, abduction, thresholds
}
criterion_main!(benches);
