use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use xrpo_bench::{rows, smooth};
use xrpo_core::dataset::generate_scenarios;
use xrpo_core::regressor::FnPredictor;
use xrpo_core::{
    exact_shapley, kernel_shapley, solve_power_flow, solve_rpo_ga, Background, ControlVector,
    GaParams, LoadScenario, NetworkModel, ObjectiveWeights, ScenarioConfig, Sigma,
};

fn power_flow(c: &mut Criterion) {
    let net = NetworkModel::ieee33();
    let scen = LoadScenario::base(&net);
    let zero = ControlVector::zeros(&net);
    c.bench_function("power_flow_ieee33", |b| {
        b.iter(|| solve_power_flow(&net, &scen, &zero).unwrap())
    });
}

fn ga_restart(c: &mut Criterion) {
    let net = NetworkModel::ieee33();
    let scen = LoadScenario::base(&net);
    let ga = GaParams {
        restarts: 1,
        ..GaParams::default()
    };
    let mut group = c.benchmark_group("rpo");
    group.sample_size(10);
    group.bench_function("ga_single_restart_ieee33", |b| {
        b.iter(|| solve_rpo_ga(&net, &scen, ObjectiveWeights::default(), &ga).unwrap())
    });
    group.finish();
}

fn scenarios(c: &mut Criterion) {
    let net = NetworkModel::ieee33();
    let cfg = ScenarioConfig::default();
    c.bench_function("generate_1000_scenarios", |b| {
        b.iter_batched(
            || (),
            |_| generate_scenarios(&net, 1000, 1, &cfg).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn shapley(c: &mut Criterion) {
    let mut group = c.benchmark_group("shapley");
    group.sample_size(10);
    let p = 10;
    let pred = FnPredictor::new("smooth", p, smooth);
    let bg = Background::new(rows(50, p, 1)).unwrap();
    let x = rows(1, p, 2).remove(0);
    group.bench_function("exact_p10_m50", |b| {
        b.iter(|| exact_shapley(&pred, &x, 0, &bg).unwrap())
    });

    let p = 64;
    let pred = FnPredictor::new("smooth", p, smooth);
    let bg = Background::new(rows(100, p, 3)).unwrap();
    let x = rows(1, p, 4).remove(0);
    group.bench_function("kernel_p64_m100", |b| {
        b.iter(|| kernel_shapley(&pred, &x, 0, &bg, Sigma::Median).unwrap())
    });
    group.finish();
}

criterion_group!(benches, power_flow, ga_restart, scenarios, shapley);
criterion_main!(benches);
