use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use pairsource::harness::{run_scenario_with, Execution, Protocol, ScenarioConfig, ServerSpec, TransportKind};

fn scenario_trials(c: &mut Criterion) {
    let mut group = c.benchmark_group("scenario_trials");
    group.sample_size(10);
    for protocol in [Protocol::Sm, Protocol::Bpsm] {
        let cfg = ScenarioConfig::new("bench", protocol, "toy-32", ServerSpec::honest(), ServerSpec::honest())
            .trials(64)
            .seed(3);
        for (label, execution) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_with_input(BenchmarkId::new(format!("{protocol:?}"), label), &execution, |b, &execution| {
                b.iter(|| run_scenario_with(&cfg, TransportKind::InProcess, execution).unwrap())
            });
        }
    }
    group.finish();
}

fn delegated_pairing(c: &mut Criterion) {
    use pairsource::bpsm::{bpsm_outsource, DirectPairServers};
    use pairsource::pairing::tate_pairing;
    use pairsource::params::preset;
    use rand::SeedableRng;

    let mut group = c.benchmark_group("pairing");
    group.sample_size(10);
    for name in ["toy-32", "toy-64"] {
        let pp = preset(name).unwrap();
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
        let a = pp.curve().random_subgroup_point(&mut rng).unwrap();
        let b = pp.curve().random_subgroup_point(&mut rng).unwrap();
        group.bench_function(BenchmarkId::new("local", name), |bench| bench.iter(|| tate_pairing(&a, &b, &pp).unwrap()));
        let mut servers = DirectPairServers { params: pp.clone() };
        group.bench_function(BenchmarkId::new("delegated", name), |bench| {
            bench.iter(|| bpsm_outsource(&a, &b, &pp, &mut servers, &mut rng).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, scenario_trials, delegated_pairing);
criterion_main!(benches);
