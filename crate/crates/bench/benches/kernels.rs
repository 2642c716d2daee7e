use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scooterbench_core::config::Config;
use scooterbench_core::daq::{capture_cycles, ensemble_average};
use scooterbench_core::harness::{Bench, LoadModel};
use scooterbench_core::powertrain::{Powertrain, Strategy};
use scooterbench_core::vehicle::{fit_resistance_curve, simulate_coast_down, ResistanceCurve, VehicleParams};

fn engine(c: &mut Criterion) {
    let pt = Powertrain::new(Config::default().engine).unwrap();
    let state = pt.state(100.0, 48.7, 20.5);
    c.bench_function("pressure_trace", |b| b.iter(|| pt.trace(black_box(&state), 1.0)));
    c.bench_function("wheel_force", |b| b.iter(|| pt.force(black_box(50.0), black_box(48.7), 0.0)));

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cycles = capture_cycles(&pt, &state, 60, 0.02, &mut rng);
    c.bench_function("ensemble_60_cycles", |b| b.iter(|| ensemble_average(black_box(&cycles)).unwrap()));
}

fn vehicle(c: &mut Criterion) {
    let p = VehicleParams::default();
    let run = simulate_coast_down(&p, &ResistanceCurve::ROAD_LOAD, 50.0, 0.0, 0.01).unwrap();
    c.bench_function("coast_down_simulate", |b| {
        b.iter(|| simulate_coast_down(&p, &ResistanceCurve::ROAD_LOAD, black_box(50.0), 0.0, 0.01).unwrap())
    });
    c.bench_function("coast_down_fit", |b| b.iter(|| fit_resistance_curve(black_box(&run), &p).unwrap()));
}

fn closed_loop(c: &mut Criterion) {
    let bench = Bench::new(Config::default()).unwrap();
    let mut group = c.benchmark_group("closed_loop");
    group.sample_size(10);
    for s in [Strategy::Or, Strategy::Vc] {
        group.bench_function(format!("ten_seconds_{s}"), |b| {
            b.iter(|| {
                let mut sim = bench.loop_sim(s, bench.plant(LoadModel::Dyno, 0.0), 48.7, 1).unwrap();
                sim.run(10.0).unwrap()
            })
        });
    }
    group.bench_function("sweep_point_level_vc", |b| b.iter(|| bench.run_point(0.0, Strategy::Vc, 1).unwrap()));
    group.finish();
}

criterion_group!(benches, engine, vehicle, closed_loop);
criterion_main!(benches);
