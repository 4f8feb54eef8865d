use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ctsa_bench::{advdiff_fixture, THETA_STAR};
use ctsa_core::benes::{benes_step, BenesFilterState, BenesModel};
use ctsa_core::bundle::{scalar_linear_bundle, BenesBundle, JointBundle};
use ctsa_core::linear::{kb_step, KbState, LinearGaussianModel};
use ctsa_core::sde::{euler_maruyama_step, FnSde};
use nalgebra::{DMatrix, DVector};

fn integrator(c: &mut Criterion) {
    let ou = FnSde::new(
        1,
        1,
        |_t: f64, x: &DVector<f64>| -x.clone(),
        |_t: f64, _x: &DVector<f64>| DMatrix::identity(1, 1),
    );
    let x = DVector::from_element(1, 0.3);
    let dw = DVector::from_element(1, 0.01);
    c.bench_function("euler_maruyama_step/ou", |b| {
        b.iter(|| euler_maruyama_step(&ou, black_box(&x), 0.0, 0.01, black_box(&dw)).unwrap())
    });
}

fn filters(c: &mut Criterion) {
    let model = LinearGaussianModel::scalar(1.0, 0.5, 0.0, 1.0);
    let st = KbState::new(DVector::from_element(1, 0.2), DMatrix::from_element(1, 1, 0.4));
    let dy = DVector::from_element(1, 0.003);
    c.bench_function("kb_step/scalar", |b| {
        b.iter(|| kb_step(&model, black_box(&st), black_box(&dy), 0.01).unwrap())
    });

    let bm = BenesModel::new(3.0, 2.0, 0.7, 2.0, 4.0, 5.0).unwrap();
    let bs = BenesFilterState::new(0.5, 1.0);
    c.bench_function("benes_step", |b| {
        b.iter(|| benes_step(&bm, black_box(&bs), black_box(0.003), 0.01).unwrap())
    });
}

fn joint_steps(c: &mut Criterion) {
    let mut scalar = scalar_linear_bundle(1.0, 0.0, 1.0, 0.0, 0.5, 1).unwrap();
    let mut k = 0;
    c.bench_function("bundle_step/scalar", |b| {
        b.iter(|| {
            let dy = scalar.synthesize(&[0.5], k, 0.01).unwrap();
            k += 1;
            scalar.filter_step(&[1.0], &[0.5], &dy, 0.01).unwrap()
        })
    });

    let truth = BenesModel::new(3.0, 2.0, 0.7, 2.0, 4.0, 4.0).unwrap();
    let mut benes = BenesBundle::new(truth, 1);
    let mut k = 0;
    c.bench_function("bundle_step/benes", |b| {
        b.iter(|| {
            let dy = benes.synthesize(&[5.0], k, 0.01).unwrap();
            k += 1;
            benes.filter_step(&[3.0, 2.0, 0.7], &[5.0], &dy, 0.01).unwrap()
        })
    });

    let (mut adv, o) = advdiff_fixture(1).unwrap();
    let mut k = 0;
    let mut group = c.benchmark_group("bundle_step");
    group.sample_size(20);
    group.bench_function("advdiff_k3", |b| {
        b.iter(|| {
            let dy = adv.synthesize(&o, k, 0.01).unwrap();
            k += 1;
            adv.filter_step(&THETA_STAR, &o, &dy, 0.01).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, integrator, filters, joint_steps);
criterion_main!(benches);
