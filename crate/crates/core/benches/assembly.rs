//! Serial against rayon-parallel assembly of the block system.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use sosm_core::assembly::{assemble_system, interpolate_coefficients, Family, Sample, Spaces};
use sosm_core::exec::Execution;
use sosm_core::mesh::{unit_square_mesh, Diagonal};
use sosm_core::verify::{ManufacturedCase, MmsParameters};

fn assembly(c: &mut Criterion) {
    let case = ManufacturedCase::standard(MmsParameters::default());
    let model = case.model();
    let mut group = c.benchmark_group("assemble_system");
    group.sample_size(10);
    for n in [16, 32] {
        let mesh = unit_square_mesh(n, Diagonal::Right).unwrap();
        let state = interpolate_coefficients(&mesh, &model, None, |s| {
            let p = match s {
                Sample::Centroid(c) => mesh.centroid(c),
                Sample::Vertex(v) => mesh.vertices()[v],
            };
            Ok(case.concentrations(p))
        })
        .unwrap();
        let spaces = Spaces::new(&mesh, Family::One, Execution::Parallel).unwrap();
        for (name, exec) in [
            ("serial", Execution::Serial),
            ("parallel", Execution::Parallel),
        ] {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| assemble_system(&state, &model, &mesh, &spaces, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, assembly);
criterion_main!(benches);
