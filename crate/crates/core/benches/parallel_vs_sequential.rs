use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use seqnpa::moment::RelaxationFlags;
use seqnpa::ncalg::LevelSpec;
use seqnpa::par::with_workers;
use seqnpa::qsim::{weak_measurement_strategy, sequential_behavior};
use seqnpa::scenario::{NamedFunctional, ScenarioSpec};
use seqnpa::tasks::{self, DEFAULT_EPSILON};

fn modes() -> [(&'static str, usize); 2] {
    // one worker versus one per core
    [("sequential", 1), ("parallel", 0)]
}

fn tradeoff_scan(c: &mut Criterion) {
    let grid = tasks::default_tradeoff_grid();
    let mut g = c.benchmark_group("tradeoff_scan_level1");
    g.sample_size(10);
    for (name, workers) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                with_workers(workers, || {
                    tasks::chsh_tradeoff_scan(&grid, &LevelSpec::Degree(1), RelaxationFlags::sequential()).unwrap()
                })
            })
        });
    }
    g.finish();
}

fn vertex_enumeration(c: &mut Criterion) {
    let s = ScenarioSpec::gallego();
    let f = NamedFunctional::GallegoI.build(&s).unwrap();
    let mut g = c.benchmark_group("vertex_enumeration");
    g.sample_size(10);
    for (name, workers) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| with_workers(workers, || tasks::tol_vertex_max(&s, &f).unwrap()))
        });
    }
    g.finish();
}

fn simulation(c: &mut Criterion) {
    let grid = tasks::default_noise_grid();
    let mut g = c.benchmark_group("behavior_grid");
    for (name, workers) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                with_workers(workers, || {
                    seqnpa::par::map_slice(&grid, |&eta| {
                        sequential_behavior(&weak_measurement_strategy(eta, DEFAULT_EPSILON).unwrap()).unwrap()
                    })
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, tradeoff_scan, vertex_enumeration, simulation);
criterion_main!(benches);
