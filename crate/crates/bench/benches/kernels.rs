use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use privdist::analysis::audit_sensitivity;
use privdist::engine::{noise_block, random_initial_state, step_alg1, NetworkState};
use privdist::objective::{make_adjacent, random_problem};
use privdist::privacy_eval::knn_mutual_information;
use privdist::rng::{substream, Purpose};
use privdist::topology::{erdos_renyi_connected, metropolis_weights};
use privdist::{run, Algorithm, ScheduleParams};
use rand::Rng;
use rand_distr::StandardNormal;

fn sensor_network(n: usize) -> (privdist::Problem, privdist::WeightMatrix) {
    let g = erdos_renyi_connected(n, 0.1f64.max(4.0 / n as f64), 1, 500).unwrap();
    (random_problem(n, 3, 2, (0.1, 1.0), 1).unwrap(), metropolis_weights(&g).unwrap())
}

fn schedule() -> ScheduleParams {
    ScheduleParams::new(0.001, 1000.0, 0.97, 0.99, 1.0, 1.0).unwrap()
}

fn alg1_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("alg1_step");
    for n in [10, 100] {
        let (pr, w) = sensor_network(n);
        let st = NetworkState::new(random_initial_state(n, 2, 1, 0));
        let xi = noise_block(n, 2, 0.05, 1, 0, 1);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| step_alg1(black_box(&st), &w, &pr, 0.001, 1000.0, &xi).unwrap())
        });
    }
    group.finish();
}

fn full_run(c: &mut Criterion) {
    let (pr, w) = sensor_network(100);
    let sp = schedule();
    c.bench_function("alg1_run_n100_t1000", |b| b.iter(|| run(&pr, &w, &sp, Algorithm::Alg1, 1000, 1, None).unwrap()));
}

fn audit(c: &mut Criterion) {
    let (pr, w) = sensor_network(10);
    let pair = make_adjacent(&pr, 0, 1.0, 1).unwrap();
    let sp = schedule();
    c.bench_function("audit_n10_t50_x20", |b| {
        b.iter(|| audit_sensitivity(&pair, Algorithm::Alg1, &w, &sp, 50, 20, 1).unwrap())
    });
}

fn ksg(c: &mut Criterion) {
    let mut group = c.benchmark_group("ksg_k3");
    group.sample_size(20);
    for n in [1000, 5000] {
        let mut rng = substream(3, 0, Purpose::Other(3));
        let xs: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.9 * x + 0.4 * rng.sample::<f64, _>(StandardNormal)).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| knn_mutual_information(black_box(&xs), &ys, 3).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, alg1_step, full_run, audit, ksg);
criterion_main!(benches);
