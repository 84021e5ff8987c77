//! Sequential vs rayon replica fan-out on representative workloads.
//!
//! Without the `parallel` feature only the sequential group runs.

use bvm_core::continuum::{simulate_bbm, BbmParams};
use bvm_core::forward::simulate;
use bvm_core::harness::LatticeParams;
use bvm_core::par::map_replicas_sequential;
use bvm_core::rng;
use bvm_core::spde::{run_spde, Mesh, Noise, SpdeField};
use bvm_core::LimitParams;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

const REPS: usize = 64;

fn lattice_replica(i: usize) -> f64 {
    let p = LatticeParams::default();
    let (d, f, start) = (p.domain().unwrap(), p.family().unwrap(), p.start().unwrap());
    let mut g = rng::stream(1, &[i as u64]);
    let (end, _) = simulate(&d, &f, &start, 1.0, &[], &mut g).unwrap();
    end.xi.iter().map(|&x| x as f64).sum()
}

fn bbm_replica(i: usize) -> f64 {
    let p = BbmParams::new(LimitParams::new(1.0, 1.0, 0.25).unwrap(), 1.0, 1e-3);
    let mut g = rng::stream(2, &[i as u64]);
    simulate_bbm(&[0.0, 0.0], &p, 0.5, &mut g, None).unwrap().0.product(|x| 0.3 + 0.4 * (-x * x).exp())
}

fn spde_replica(i: usize) -> f64 {
    let limits = LimitParams::new(1.0, 1.0, 0.25).unwrap();
    let mesh = Mesh::new(-5.0, 0.1, 100, 0.0025);
    let start = SpdeField::from_fn(&mesh, |x| 0.3 + 0.4 * (-x * x).exp(), |_| 0.0).unwrap();
    let mut g = rng::stream(3, &[i as u64]);
    run_spde(&start, &mesh, &limits, 1.0, 200, None, Noise::Single(&mut g)).unwrap().final_field.u[50]
}

fn fan_out(c: &mut Criterion) {
    let workloads: [(&str, fn(usize) -> f64); 3] = [("lattice", lattice_replica), ("bbm", bbm_replica), ("spde", spde_replica)];
    let mut group = c.benchmark_group("replicas");
    group.sample_size(10);
    for (name, f) in workloads {
        group.bench_with_input(BenchmarkId::new("sequential", name), &f, |b, f| {
            b.iter(|| black_box(map_replicas_sequential(REPS, f)))
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("parallel", name), &f, |b, f| {
            b.iter(|| black_box(bvm_core::par::map_replicas_parallel(REPS, f)))
        });
    }
    group.finish();
}

criterion_group!(benches, fan_out);
criterion_main!(benches);
