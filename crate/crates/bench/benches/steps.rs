use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use oqns_bench::gradients;
use oqns_core::linalg::{full_inverse_spd, rank_one_inverse_update};
use oqns_core::{Oqns, OqnsParams, Ons, OnsParams, PotentialParams, SpdMatrixPair, TaylorOrder};

const WARMUP_ROUNDS: usize = 200;

fn learner_steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("step");
    for d in [10usize, 40] {
        let grads = gradients(d, WARMUP_ROUNDS + 1000, 1);
        let params = OqnsParams::new(PotentialParams::new(d, 11.0, 0.125, 1.0).unwrap(), 0.25, TaylorOrder::Auto, 4000)
            .unwrap()
            .with_shadow(0, false);
        let mut oqns = Oqns::new(params).unwrap();
        let mut ons = Ons::new(OnsParams::unit_ball(d, 0.5)).unwrap();
        for g in &grads[..WARMUP_ROUNDS] {
            oqns.step(g).unwrap();
            ons.step(g).unwrap();
        }
        let mut i = 0;
        group.bench_with_input(BenchmarkId::new("oqns", d), &d, |b, _| {
            b.iter(|| {
                let g = &grads[WARMUP_ROUNDS + i % 1000];
                i += 1;
                black_box(oqns.step(g).unwrap());
            })
        });
        let mut i = 0;
        group.bench_with_input(BenchmarkId::new("ons", d), &d, |b, _| {
            b.iter(|| {
                let g = &grads[WARMUP_ROUNDS + i % 1000];
                i += 1;
                ons.step(g).unwrap();
                black_box(ons.iterate());
            })
        });
    }
    group.finish();
}

fn inverse_maintenance(c: &mut Criterion) {
    let mut group = c.benchmark_group("inverse");
    for d in [10usize, 40, 100] {
        let v = &gradients(d, 1, 2)[0];
        let mut pair = SpdMatrixPair::identity(d);
        for g in gradients(d, 50, 3) {
            pair = rank_one_inverse_update(&pair, &g, 1.0).unwrap();
        }
        group.bench_with_input(BenchmarkId::new("rank_one_update", d), &d, |b, _| {
            b.iter(|| black_box(rank_one_inverse_update(&pair, v, 0.125).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("full_inverse", d), &d, |b, _| {
            b.iter(|| black_box(full_inverse_spd(pair.forward()).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, learner_steps, inverse_maintenance);
criterion_main!(benches);
