//! Hot-path benchmarks: metric evaluation, operator-norm estimation, and a
//! full certified Picard run on the exponential field.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use frechet_bench::bench_space;
use frechet_core::calculus::DomainSpec;
use frechet_core::expr::{self, Extension};
use frechet_core::operators::{lip_norm_estimate, LinearMapRep, ShiftDirection};
use frechet_core::picard::{picard_solve, PicardProblem, VectorFieldLocal};
use frechet_core::rules::SequenceRule;
use frechet_core::sampling;

fn metric_distance(c: &mut Criterion) {
    let s = bench_space();
    let mut rng = sampling::rng_for(11, 0xBE01);
    let pairs: Vec<_> = (0..64)
        .map(|_| {
            (
                sampling::dyadic_vector(&s, s.truncation(), &mut rng),
                sampling::dyadic_vector(&s, s.truncation(), &mut rng),
            )
        })
        .collect();
    c.bench_function("metric_distance_64_pairs", |b| {
        b.iter(|| {
            for (e, f) in &pairs {
                black_box(s.distance(black_box(e), black_box(f)).unwrap());
            }
        })
    });
}

fn operator_norm(c: &mut Criterion) {
    let s = bench_space();
    let id = s.id().clone();
    let decay = LinearMapRep::diagonal(
        id.clone(),
        SequenceRule::Geometric { coeff: 1.0, ratio: 0.5 },
    )
    .unwrap();
    let map =
        LinearMapRep::compose(decay, LinearMapRep::shift(id, ShiftDirection::Left)).unwrap();
    c.bench_function("lip_norm_estimate_160_probes", |b| {
        b.iter(|| black_box(lip_norm_estimate(&map, &s, &s, 160, 11).unwrap()))
    });
}

fn picard(c: &mut Criterion) {
    let s = bench_space();
    let xi = expr::mc_map_from_exprs(
        &s,
        &s,
        &[expr::parse("x1").unwrap()],
        1,
        Extension::Zero,
        DomainSpec::All,
        u32::MAX,
    )
    .unwrap();
    let field = VectorFieldLocal::from_map("flat", &xi, 2.0, 1.0).unwrap();
    let start = s.basis(1, 1.0);
    let mut group = c.benchmark_group("integrator");
    group.sample_size(10);
    group.bench_function("picard_solve_251_nodes", |b| {
        b.iter(|| {
            let prob =
                PicardProblem::new(&field, start.clone(), 0.0, 1.0, 2e-3, 0.0).unwrap();
            black_box(picard_solve(&prob, 8, 16, 11).unwrap())
        })
    });
    group.finish();
}

criterion_group!(benches, metric_distance, operator_norm, picard);
criterion_main!(benches);
