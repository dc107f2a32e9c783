use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use invarlab_bench::{cone_problem, oscillating, prototype_system, EXPRESSION};
use invarlab_core::certificates::{check, max_feasible_a};
use invarlab_core::envelope::{convex_env, star_env};
use invarlab_core::ode::{integrate, StepConfig};
use invarlab_core::{parse, CheckOptions, MarginKind};

fn certificates(c: &mut Criterion) {
    let prob = cone_problem();
    let mut g = c.benchmark_group("lemma1_check");
    for n in [256usize, 1024, 4096] {
        let opts = CheckOptions::default().with_grid(n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &opts, |b, o| {
            b.iter(|| check(black_box(&prob), MarginKind::Lemma1, o).unwrap())
        });
    }
    g.finish();
    c.bench_function("max_feasible_a", |b| {
        b.iter(|| max_feasible_a(&prob, MarginKind::Lemma1, 10.0, 1e-9, &CheckOptions::default()).unwrap())
    });
}

fn envelopes(c: &mut Criterion) {
    let f = oscillating();
    c.bench_function("star_env", |b| b.iter(|| star_env(black_box(&f), 0.0, 0.0, 1.0, 1e-8, 64).unwrap()));
    c.bench_function("convex_env", |b| b.iter(|| convex_env(black_box(&f), 0.0, 1.0, 4096).unwrap()));
}

fn expressions(c: &mut Criterion) {
    let e = parse(EXPRESSION).unwrap();
    c.bench_function("parse", |b| b.iter(|| parse(black_box(EXPRESSION)).unwrap()));
    c.bench_function("eval", |b| b.iter(|| e.eval(&("V", black_box(0.3))).unwrap()));
}

fn integration(c: &mut Criterion) {
    let sys = prototype_system();
    let init = [0.5, 0.6];
    c.bench_function("dopri45_t200", |b| b.iter(|| integrate(&sys, black_box(&init), &StepConfig::adaptive(200.0)).unwrap()));
    c.bench_function("rk4_t10_h1e-3", |b| b.iter(|| integrate(&sys, black_box(&init), &StepConfig::rk4(1e-3, 10.0)).unwrap()));
}

criterion_group!(benches, certificates, envelopes, expressions, integration);
criterion_main!(benches);
