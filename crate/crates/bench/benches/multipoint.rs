use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use mpq_core::convlab::gaussian_vector;
use mpq_core::intpipe::{dot_multipoint_int, encode_coeff, IntActivation};
use mpq_core::multipoint::{
    best_coefficient, decompose, l2_norm, oracle_decompose_step, search_range_end, DecomposeParams,
    StepPolicy,
};
use mpq_core::netquant::{build_ladders, quantize_network, QuantConfig};
use mpq_core::quantgrid::QuantGrid;
use mpq_core::synth::{synthetic_mlp, SynthSpec};

fn grid_search(c: &mut Criterion) {
    let mut group = c.benchmark_group("best_coefficient");
    for (d, bits) in [(64, 2), (64, 4), (512, 4)] {
        let r = gaussian_vector(d, 1);
        let grid = QuantGrid::unit(bits).unwrap();
        let (step, _) = StepPolicy::default().step_for(&r, &grid);
        let end = search_range_end(l2_norm(&r), &grid);
        group.bench_with_input(BenchmarkId::new(format!("b{bits}"), d), &r, |b, r| {
            b.iter(|| best_coefficient(black_box(r), &grid, step, end, None).unwrap())
        });
    }
    group.finish();
}

fn decomposition(c: &mut Criterion) {
    let mut group = c.benchmark_group("decompose_8_pairs");
    for d in [64, 256] {
        let w = gaussian_vector(d, 2);
        let grid = QuantGrid::unit(4).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(d), &w, |b, w| {
            b.iter(|| decompose(black_box(w), grid, DecomposeParams::new(8)).unwrap())
        });
    }
    group.finish();
}

fn oracle(c: &mut Criterion) {
    let r = gaussian_vector(6, 3);
    let grid = QuantGrid::unit(2).unwrap();
    c.bench_function("oracle_step_d6_b2", |b| {
        b.iter(|| oracle_decompose_step(black_box(&r), &grid).unwrap())
    });
}

fn integer_mac(c: &mut Criterion) {
    let d = 1024;
    let codes: Vec<Vec<i32>> = (0..3)
        .map(|k| (0..d).map(|i| (i * 7 + k) % 15 - 7).collect())
        .collect();
    let x = IntActivation::new((0..d).map(|i| i % 255 - 127).collect(), 8).unwrap();
    let coeffs: Vec<_> = [0.31, -0.07, 0.002]
        .iter()
        .map(|&a| encode_coeff(a, 16).unwrap())
        .collect();
    c.bench_function("mac_d1024_n3", |b| {
        b.iter(|| dot_multipoint_int(black_box(&codes), &x, &coeffs).unwrap())
    });
}

fn network(c: &mut Criterion) {
    let model = synthetic_mlp(&SynthSpec {
        widths: vec![64, 64, 32],
        samples: 128,
        outlier_channels: 2,
        ..Default::default()
    })
    .unwrap();
    let cfg = QuantConfig {
        epsilon: 0.05,
        ..QuantConfig::default()
    };
    let mut group = c.benchmark_group("network");
    group.sample_size(10);
    group.bench_function("quantize", |b| {
        b.iter(|| quantize_network(black_box(&model), &cfg).unwrap())
    });
    group.bench_function("ladders", |b| {
        b.iter(|| build_ladders(black_box(&model), &cfg).unwrap())
    });
    group.finish();
}

criterion_group!(
    benches,
    grid_search,
    decomposition,
    oracle,
    integer_mac,
    network
);
criterion_main!(benches);
