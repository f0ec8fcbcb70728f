use biharm_bench::Fixture;
use biharm_core::assemble::broken_dg_matrix;
use biharm_core::patch::default_threshold;
use biharm_core::solver::{self, Preconditioner};
use biharm_core::{DgSystem, MgHierarchy, Penalties, ReconOperator};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

const SIZES: [usize; 2] = [16, 32];

fn reconstruction(c: &mut Criterion) {
    let mut g = c.benchmark_group("recon_build");
    for m in [2, 3] {
        for n in SIZES {
            let f = Fixture::square(n, m).unwrap();
            let mesh = &f.problem.mesh;
            g.bench_with_input(BenchmarkId::new(format!("m{m}"), n), &n, |b, _| {
                b.iter(|| ReconOperator::build(mesh, m, default_threshold(2, m)).unwrap())
            });
        }
    }
    g.finish();
}

fn assembly(c: &mut Criterion) {
    let mut g = c.benchmark_group("assembly");
    g.sample_size(10);
    for m in [2, 3] {
        for n in SIZES {
            let f = Fixture::square(n, m).unwrap();
            let mesh = &f.problem.mesh;
            let recon = f.problem.system.recon();
            g.bench_with_input(BenchmarkId::new(format!("broken_m{m}"), n), &n, |b, _| {
                b.iter(|| broken_dg_matrix(mesh, recon.bases(), Penalties::default()).unwrap())
            });
            g.bench_with_input(BenchmarkId::new(format!("system_m{m}"), n), &n, |b, _| {
                b.iter(|| DgSystem::assemble(mesh, recon.clone(), Penalties::default()).unwrap())
            });
        }
    }
    g.finish();
}

fn multigrid(c: &mut Criterion) {
    let mut g = c.benchmark_group("multigrid_apply");
    for n in [32, 64] {
        let f = Fixture::square(n, 2).unwrap();
        let sys = &f.problem.system;
        let mg1 = MgHierarchy::variant_one(&f.hier, sys.low_order(), None).unwrap();
        let mg2 = MgHierarchy::variant_two(&f.hier).unwrap();
        let r = f.problem.rhs.clone();
        g.bench_with_input(BenchmarkId::new("mg1", n), &n, |b, _| {
            b.iter(|| mg1.apply(black_box(&r)))
        });
        g.bench_with_input(BenchmarkId::new("mg2", n), &n, |b, _| {
            b.iter(|| mg2.apply(black_box(&r)))
        });
    }
    g.finish();
}

fn pcg_solve(c: &mut Criterion) {
    let mut g = c.benchmark_group("pcg_mg1_solve");
    g.sample_size(10);
    for n in [32, 64] {
        let f = Fixture::square(n, 2).unwrap();
        let sys = &f.problem.system;
        let mg = MgHierarchy::variant_one(&f.hier, sys.low_order(), None).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                solver::pcg(
                    sys.matrix(),
                    &f.problem.rhs,
                    &mg,
                    solver::DEFAULT_TOL,
                    solver::DEFAULT_MAX_ITERS,
                )
            })
        });
    }
    g.finish();
}

criterion_group!(benches, reconstruction, assembly, multigrid, pcg_solve);
criterion_main!(benches);
