use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;
use verimech::analysis::{empirical_distribution, tradeoff_sweep, SweepFamily};
use verimech::facility::{brute_force_kcenter, proportional_exact_distribution};
use verimech::instances::{apply_liars, random_graph_instance, random_profile, ProfileKind};
use verimech::{
    bot_probabilities, evaluate_rule, run_greedy, run_proportional, run_rule_mechanism, LiarSpec, Mutation, RngStream,
    RuleSpec, VerificationOracle,
};

fn closed_forms(c: &mut Criterion) {
    let mut rng = RngStream::new(1, 0).rng();
    let mut group = c.benchmark_group("closed_form");
    for m in [8usize, 64, 512] {
        let w = random_profile(10, m, ProfileKind::Uniform01, &mut rng).unwrap().weight_vector(true);
        for rule in [RuleSpec::Power { l: 9 }, RuleSpec::PartialPower { l: 3, r: 4 }, RuleSpec::Exponential { alpha: 0.5 }] {
            group.bench_with_input(BenchmarkId::new(rule.name(), m), &w, |b, w| b.iter(|| evaluate_rule(&rule, black_box(w))));
        }
    }
    let truthful = random_profile(10, 64, ProfileKind::Uniform01, &mut rng).unwrap().weight_vector(true);
    group.bench_function("bot_probabilities/64", |b| b.iter(|| bot_probabilities(&truthful, &truthful, 3, 4).unwrap()));
    group.finish();
}

fn single_runs(c: &mut Criterion) {
    let mut rng = RngStream::new(2, 0).rng();
    let base = random_profile(20, 16, ProfileKind::Uniform01, &mut rng).unwrap();
    let lied = apply_liars(&base, &LiarSpec { agents: vec![0, 5, 9], mutation: Mutation::Scale { factor: 10.0 } }).unwrap();
    let mut group = c.benchmark_group("mechanism_run");
    for (label, profile) in [("truthful", &base), ("three_liars", &lied)] {
        for rule in [RuleSpec::Power { l: 4 }, RuleSpec::PartialPower { l: 2, r: 3 }, RuleSpec::Exponential { alpha: 0.5 }] {
            let mut t = 0u64;
            group.bench_function(format!("{}/{label}", rule.name()), |b| {
                b.iter(|| {
                    t += 1;
                    let mut oracle = VerificationOracle::from_profile(profile);
                    run_rule_mechanism(&rule, profile, &mut oracle, RngStream::trial(7, t)).unwrap()
                })
            });
        }
    }
    group.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let mut rng = RngStream::new(3, 0).rng();
    let profile = random_profile(8, 8, ProfileKind::Uniform01, &mut rng).unwrap();
    let trials = 10_000u64;
    let mut group = c.benchmark_group("empirical_distribution");
    group.sample_size(10).throughput(Throughput::Elements(trials));
    group.bench_function("power_l9_m8", |b| {
        b.iter(|| empirical_distribution(&RuleSpec::Power { l: 9 }, &profile, trials, 1).unwrap())
    });
    let profiles = vec![profile.clone()];
    group.throughput(Throughput::Elements(11 * 100));
    group.bench_function("sweep_power_0_to_10", |b| {
        b.iter(|| tradeoff_sweep(SweepFamily::Power, &profiles, &(0..=10).map(f64::from).collect::<Vec<_>>(), 100, 1).unwrap())
    });
    group.finish();
}

fn facility(c: &mut Criterion) {
    let mut rng = RngStream::new(4, 0).rng();
    let inst = random_graph_instance(10, 8, 3, &mut rng).unwrap();
    let small = random_graph_instance(8, 6, 3, &mut rng).unwrap();
    let mut group = c.benchmark_group("facility");
    group.bench_function("greedy", |b| b.iter(|| run_greedy(&inst, &mut inst.oracle(), RngStream::new(0, 0))));
    let mut t = 0u64;
    group.bench_function("proportional", |b| {
        b.iter(|| {
            t += 1;
            run_proportional(&inst, &mut inst.oracle(), RngStream::trial(1, t))
        })
    });
    group.bench_function("brute_force_kcenter", |b| {
        b.iter(|| brute_force_kcenter(inst.agents_true(), 3, inst.dist_matrix()).unwrap())
    });
    group.bench_function("proportional_exact_law", |b| b.iter(|| proportional_exact_distribution(&small).unwrap()));
    group.finish();
}

criterion_group!(benches, closed_forms, single_runs, monte_carlo, facility);
criterion_main!(benches);
