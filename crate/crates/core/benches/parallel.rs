use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use eqtrends::dist::{default_levels, simulate_w_quantile};
use eqtrends::equivalence::TestKind;
use eqtrends::panel::DEFAULT_GRID;
use eqtrends::simulate::{run_study, BetaPattern, SimulationScenario};
use eqtrends::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn w_quantiles(c: &mut Criterion) {
    let mut group = c.benchmark_group("w_quantiles_100k");
    group.sample_size(10);
    let levels = default_levels();
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| simulate_w_quantile(&DEFAULT_GRID, &levels, black_box(100_000), 7, exec).unwrap())
        });
    }
    group.finish();
}

fn study(c: &mut Criterion) {
    let scn = SimulationScenario {
        n: 500,
        t: 4,
        beta: BetaPattern::AllAt { value: 1.0 },
        reps: 200,
        seed: 7,
        bootstrap_b: 500,
        tests: vec![TestKind::IuMax, TestKind::ClusterBootMax, TestKind::Mean],
        minimal_thresholds: false,
        ..Default::default()
    };
    let mut group = c.benchmark_group("study_200_reps");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_study(black_box(&scn), None, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, w_quantiles, study);
criterion_main!(benches);
