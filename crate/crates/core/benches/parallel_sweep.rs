//! Grid sweeps are the only hot path worth spreading over cores: every h
//! is independent and each point costs a full step plus the subset
//! convolutions behind its elementary differentials. This suite pits the
//! rayon fan-out against a one-thread pool and the plain sequential map
//! on the same workload.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use nsark::nbseries::UCoefficients;
use nsark::orderlab::{empirical_order, geometric_grid, probe_states};
use nsark::pds::Pds;
use nsark::solvers::Scheme;
use nsark::trees::enumerate;
use nsark::par;

struct Sweep {
    scheme: Scheme,
    pds: Pds,
    grid: Vec<f64>,
    states: Vec<Vec<f64>>,
}

fn sweep() -> Sweep {
    let scheme = Scheme::named("mprk33").unwrap();
    let pds = Pds::builtin("nonlinear3").unwrap();
    Sweep {
        grid: geometric_grid(0.1, 0.5, 16).unwrap(),
        states: probe_states(&pds, 7),
        scheme,
        pds,
    }
}

/// One grid point of a u-residual sweep: steps from every probe state and
/// folds the realized coefficients into u(τ) residuals.
fn grid_point(s: &Sweep, h: f64) -> f64 {
    let set = enumerate(3, s.scheme.colors(&s.pds)).unwrap();
    let mut worst = 0.0f64;
    for yn in &s.states {
        let trace = s.scheme.step(&s.pds, yn, h).unwrap();
        let u = UCoefficients::compute(&set, &trace.realized);
        for tree in set.iter() {
            let r = (u.u(tree).unwrap() - 1.0 / tree.density() as f64).abs();
            worst = worst.max(r);
        }
    }
    worst
}

fn bench_u_sweep(c: &mut Criterion) {
    let s = sweep();
    let one_thread = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();

    let mut group = c.benchmark_group("u_sweep");
    group.bench_function("rayon_default_pool", |b| {
        b.iter(|| black_box(par::par_map(&s.grid, |&h| grid_point(&s, h))))
    });
    group.bench_function("rayon_one_thread", |b| {
        b.iter(|| one_thread.install(|| black_box(par::par_map(&s.grid, |&h| grid_point(&s, h)))))
    });
    group.bench_function("seq_map", |b| {
        b.iter(|| black_box(par::seq_map(&s.grid, |&h| grid_point(&s, h))))
    });
    group.finish();
}

fn bench_empirical_order(c: &mut Criterion) {
    let s = sweep();
    let one_thread = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    // Shallower grid than the u-sweep: here every point is a whole
    // trajectory, 1/h steps, not a single step.
    let grid = geometric_grid(0.1, 0.5, 10).unwrap();

    let mut group = c.benchmark_group("empirical_order");
    group.sample_size(10);
    group.bench_function("default_pool", |b| {
        b.iter(|| black_box(empirical_order(&s.scheme, &s.pds, 1.0, &grid).unwrap()))
    });
    group.bench_function("one_thread", |b| {
        b.iter(|| {
            one_thread
                .install(|| black_box(empirical_order(&s.scheme, &s.pds, 1.0, &grid).unwrap()))
        })
    });
    group.finish();
}

criterion_group!(benches, bench_u_sweep, bench_empirical_order);
criterion_main!(benches);
