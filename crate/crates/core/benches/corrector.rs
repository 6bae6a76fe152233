use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lod_core::constraints::{build_space, Mode};
use lod_core::corrector::{assemble_basis, LodContext};
use lod_core::fem::{BoundaryCondition, FeSpace, FineForm};
use lod_core::grid::{build_mesh, refine, Domain, TraceCondition};
use lod_core::par::Parallelism;
use lod_core::problems::coefficient_a1;

fn context(mode: Mode) -> LodContext<f64> {
    let mesh = build_mesh(Domain::unit_square(), 8).unwrap();
    let fe = FeSpace::new(
        refine(&mesh, 8).unwrap(),
        1,
        BoundaryCondition::DirichletZero,
    )
    .unwrap();
    let a = coefficient_a1(32, 7).unwrap();
    let form = FineForm::diffusion(&fe, &a).unwrap();
    let space = build_space(&mesh, 1, mode).unwrap();
    LodContext::new(fe, space, form, TraceCondition::Vanishing).unwrap()
}

fn assemble(c: &mut Criterion) {
    let mut group = c.benchmark_group("assemble_basis");
    group
        .sample_size(10)
        .measurement_time(Duration::from_secs(10));
    for mode in [Mode::Dg, Mode::Cg] {
        let ctx = context(mode);
        for par in [Parallelism::Sequential, Parallelism::Rayon] {
            let id = BenchmarkId::new(
                format!("{par:?}"),
                format!("{} H=1/8 h=1/64 ell=2", mode.name()),
            );
            group.bench_with_input(id, &par, |b, &par| {
                b.iter(|| assemble_basis(black_box(&ctx), 2, par).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, assemble);
criterion_main!(benches);
