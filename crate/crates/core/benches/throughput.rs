//! Data-parallel hot paths against their single-worker baselines:
//! kernel matrix fill, sparse block assembly, basis construction and
//! the PCG kriging solve. With the `parallel` feature disabled both
//! variants run the same sequential code, which makes the fallback
//! cost visible by comparison across builds.

use criterion::{criterion_group, criterion_main, Criterion};

use mlkrig_core::basis::{build_basis, BasisOptions};
use mlkrig_core::cov::{AssemblyPlan, CovSource};
use mlkrig_core::field::{sample_points, FieldSampler, Shape};
use mlkrig_core::index_set::{build_index_set, IndexSetKind};
use mlkrig_core::kernel::KernelSpec;
use mlkrig_core::predict::solve_gamma;
use mlkrig_core::tree::{build_tree, SplitRule};

const N: usize = 800;

struct Fixture {
    pts: mlkrig_core::points::PointSet,
    tree: mlkrig_core::tree::PartitionTree,
    basis: mlkrig_core::basis::MultiLevelBasis,
    spec: KernelSpec,
    plan: AssemblyPlan,
    cov: CovSource,
    z: Vec<f64>,
}

fn fixture() -> Fixture {
    let pts = sample_points(Shape::Cube, N, 3, 9).unwrap();
    let trend = build_index_set(IndexSetKind::Td, 3, 2).unwrap();
    let tree = build_tree(&pts, 2 * trend.len(), SplitRule::Kd, 9).unwrap();
    let basis = build_basis(&tree, &pts, &trend, BasisOptions::default()).unwrap();
    let spec = KernelSpec::matern(1.25, 0.8);
    let plan = AssemblyPlan::new(&basis, &tree, &pts, 0.3, -1);
    let cov = CovSource::build(&pts, &tree.permutation, &spec).unwrap();
    let sampler = FieldSampler::new(&pts, &spec, &vec![0.0; trend.len()], &trend).unwrap();
    let z = sampler.sample(3);
    Fixture {
        pts,
        tree,
        basis,
        spec,
        plan,
        cov,
        z,
    }
}

#[cfg(feature = "parallel")]
fn single_worker<R>(f: impl FnOnce() -> R + Send) -> R
where
    R: Send,
{
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(f)
}

#[cfg(not(feature = "parallel"))]
fn single_worker<R>(f: impl FnOnce() -> R) -> R {
    f()
}

fn bench_cov_fill(c: &mut Criterion) {
    let fx = fixture();
    let mut g = c.benchmark_group("cov_fill");
    g.sample_size(20);
    g.bench_function("parallel", |b| {
        b.iter(|| CovSource::build(&fx.pts, &fx.tree.permutation, &fx.spec).unwrap())
    });
    g.bench_function("single_worker", |b| {
        b.iter(|| {
            single_worker(|| CovSource::build(&fx.pts, &fx.tree.permutation, &fx.spec).unwrap())
        })
    });
    g.finish();
}

fn bench_assembly(c: &mut Criterion) {
    let fx = fixture();
    let mut g = c.benchmark_group("sparse_assembly");
    g.sample_size(20);
    g.bench_function("parallel", |b| b.iter(|| fx.plan.assemble(&fx.basis, &fx.cov)));
    g.bench_function("single_worker", |b| {
        b.iter(|| single_worker(|| fx.plan.assemble(&fx.basis, &fx.cov)))
    });
    g.finish();
}

fn bench_basis_build(c: &mut Criterion) {
    let pts = sample_points(Shape::Cube, N, 3, 9).unwrap();
    let trend = build_index_set(IndexSetKind::Td, 3, 2).unwrap();
    let tree = build_tree(&pts, 2 * trend.len(), SplitRule::Kd, 9).unwrap();
    let mut g = c.benchmark_group("basis_build");
    g.sample_size(20);
    g.bench_function("parallel", |b| {
        b.iter(|| build_basis(&tree, &pts, &trend, BasisOptions::default()).unwrap())
    });
    g.bench_function("single_worker", |b| {
        b.iter(|| {
            single_worker(|| build_basis(&tree, &pts, &trend, BasisOptions::default()).unwrap())
        })
    });
    g.finish();
}

fn bench_kriging_solve(c: &mut Criterion) {
    let fx = fixture();
    let mut g = c.benchmark_group("kriging_solve");
    g.sample_size(10);
    g.bench_function("parallel", |b| {
        b.iter(|| solve_gamma(&fx.basis, &fx.cov, &fx.z, true, 1e-3, 5000).unwrap())
    });
    g.bench_function("single_worker", |b| {
        b.iter(|| {
            single_worker(|| solve_gamma(&fx.basis, &fx.cov, &fx.z, true, 1e-3, 5000).unwrap())
        })
    });
    g.finish();
}

criterion_group!(
    benches,
    bench_cov_fill,
    bench_assembly,
    bench_basis_build,
    bench_kriging_solve
);
criterion_main!(benches);
