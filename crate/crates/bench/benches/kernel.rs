use criterion::{criterion_group, criterion_main, Criterion};
use quasimiura::catalog::{ch, kdv};
use quasimiura::expr::Q;
use quasimiura::hodograph::{integrate_reference, solve_hodograph, KdvEquation, NumMap};
use quasimiura::lame::{reconstruct, solve_chi, solve_lame_n2, Grid2};
use quasimiura::miura::{pencil_residual, reduce_pencil, AnsatzConfig};
use std::f64::consts::PI;
use std::hint::black_box;

fn symbolic(c: &mut Criterion) {
    let k = kdv(None).unwrap();
    let h = ch().unwrap();
    let mut g = c.benchmark_group("symbolic");
    g.sample_size(10);
    g.bench_function("jacobi kdv eps^2", |b| b.iter(|| black_box(k.pencil.p2.jacobi(2))));
    g.bench_function("central invariants ch", |b| b.iter(|| black_box(h.pencil.central_invariants().unwrap())));
    g.bench_function("kdv transform residual eps^6", |b| {
        let t = k.transform.as_ref().unwrap();
        b.iter(|| black_box(pencil_residual(t, &k.pencil, 6).unwrap()))
    });
    g.bench_function("reduce kdv eps^2", |b| b.iter(|| black_box(reduce_pencil(&k.pencil, 2, &AnsatzConfig::default()).unwrap())));
    g.finish();
}

fn numeric(c: &mut Criterion) {
    let mut g = c.benchmark_group("numeric");
    g.sample_size(10);
    let v = NumMap::from_exprs(
        &[quasimiura::expr::parse("v", &["v"], &[]).unwrap()],
        &["v".to_string()],
        &Default::default(),
    )
    .unwrap();
    let xs: Vec<f64> = (0..201).map(|j| -1.0 + 0.01 * j as f64).collect();
    let ts: Vec<f64> = (0..51).map(|k| 0.02 * k as f64).collect();
    g.bench_function("hodograph hopf 201x51", |b| b.iter(|| black_box(solve_hodograph(&v, &v, &xs, &ts, (0.0, 0.0, &[0.0])).unwrap())));
    let n = 256;
    let q0: Vec<f64> = (0..n).map(|j| 0.5 * (-PI + 2.0 * PI * j as f64 / n as f64).sin()).collect();
    let eq = KdvEquation { a: 1.0, b: 2.0 * Q::new(1, 24).to_f64() * 0.01, length: 2.0 * PI, slope: 1.0 };
    g.bench_function("reference kdv 256 x 200 steps", |b| b.iter(|| black_box(integrate_reference(&eq, &q0, 0.5, 200).unwrap())));
    let grid = Grid2::new([4.0, 1.5], [1.0, 1.0], [65, 65]).unwrap();
    g.bench_function("lame pipeline 65x65", |b| {
        b.iter(|| {
            let rot = solve_lame_n2(grid, |u2| 0.3 * (2.0 * u2).sin() + 0.1, |u1| 0.2 * u1.cos()).unwrap();
            let chi = solve_chi(&rot, |_| 1.0, |_| 1.0).unwrap();
            black_box(reconstruct(&rot, chi).unwrap())
        })
    });
    g.finish();
}

criterion_group!(benches, symbolic, numeric);
criterion_main!(benches);
